use serde::{Deserialize, Serialize};

use crate::fairness::{FairnessLevels, UtilityKind};
use crate::group::Group;

use super::{AuditError, PredictionTable};

/// Weighted sums for one (group, label) stratum.
#[derive(Debug, Clone, Default, PartialEq)]
struct Stratum {
    weight: f64,
    any_offer: f64,
    any_offer_sq: f64,
    welfare: f64,
    welfare_sq: f64,
    /// Per lender: weight of rows the lender serves, and the summed offer
    /// probability over those rows.
    served: Vec<f64>,
    offered: Vec<f64>,
}

impl Stratum {
    fn new(n: usize) -> Self {
        Self {
            served: vec![0.0; n],
            offered: vec![0.0; n],
            ..Self::default()
        }
    }

    fn mean(&self, sum: f64) -> f64 {
        sum / self.weight
    }

    fn lender_rate(&self, lender: usize) -> Option<f64> {
        (self.served[lender] > 0.0).then(|| self.offered[lender] / self.served[lender])
    }
}

/// Chance of no offer and of exactly one offer when lender `l` offers
/// independently with probability `probs[l]`.
fn offer_count_head(probs: &[f64]) -> (f64, f64) {
    let (mut none, mut one) = (1.0, 0.0);
    for &p in probs {
        one = one * (1.0 - p) + none * p;
        none *= 1.0 - p;
    }
    (none, one)
}

/// Stratum aggregates from which every empirical level follows. Rows may
/// carry fractional weights, so exact model expansions and sampled counts
/// share one code path.
#[derive(Debug, Clone, PartialEq)]
pub struct StrataSummary {
    n_lenders: usize,
    util: UtilityKind<f64>,
    /// Indexed `[group][label]`.
    strata: [[Stratum; 2]; 2],
}

impl StrataSummary {
    pub fn new(n_lenders: usize, util: UtilityKind<f64>) -> Self {
        let s = || [Stratum::new(n_lenders), Stratum::new(n_lenders)];
        Self {
            n_lenders,
            util,
            strata: [s(), s()],
        }
    }

    pub fn from_table(table: &PredictionTable, util: UtilityKind<f64>) -> Self {
        let mut summary = Self::new(table.n_lenders(), util);
        for row in table.rows() {
            summary.add_served(row.group, row.label, &row.offer_prob, &row.served, 1.0);
        }
        summary
    }

    /// Adds `weight` individuals served by every lender.
    pub fn add(&mut self, group: Group, label: bool, probs: &[f64], weight: f64) {
        let served = vec![true; probs.len()];
        self.add_served(group, label, probs, &served, weight);
    }

    /// Adds `weight` individuals; unserved lenders must have `probs[l] == 0`.
    pub fn add_served(
        &mut self,
        group: Group,
        label: bool,
        probs: &[f64],
        served: &[bool],
        weight: f64,
    ) {
        assert_eq!(probs.len(), self.n_lenders, "probability vector length");
        let (none, one) = offer_count_head(probs);
        let any = 1.0 - none;
        let welfare = one + self.util.k() * (any - one);
        let s = &mut self.strata[group.index()][usize::from(label)];
        s.weight += weight;
        s.any_offer += weight * any;
        s.any_offer_sq += weight * any * any;
        s.welfare += weight * welfare;
        s.welfare_sq += weight * welfare * welfare;
        for l in 0..self.n_lenders {
            if served[l] {
                s.served[l] += weight;
                s.offered[l] += weight * probs[l];
            }
        }
    }

    fn stratum(&self, group: Group, label: bool) -> Result<&Stratum, AuditError> {
        let s = &self.strata[group.index()][usize::from(label)];
        if s.weight > 0.0 {
            Ok(s)
        } else {
            Err(AuditError::EmptyGroup { group, label })
        }
    }

    pub fn n_lenders(&self) -> usize {
        self.n_lenders
    }

    /// Total weight of the stratum.
    pub fn count(&self, group: Group, label: bool) -> f64 {
        self.strata[group.index()][usize::from(label)].weight
    }

    /// Mean chance of at least one offer in the stratum.
    pub fn offer_rate(&self, group: Group, label: bool) -> Result<f64, AuditError> {
        let s = self.stratum(group, label)?;
        Ok(s.mean(s.any_offer))
    }

    /// Mean utility of the offers received in the stratum.
    pub fn welfare(&self, group: Group, label: bool) -> Result<f64, AuditError> {
        let s = self.stratum(group, label)?;
        Ok(s.mean(s.welfare))
    }

    /// Standard error of the deserving offer-rate gap, treating rows as
    /// independent draws.
    pub fn offer_gap_standard_error(&self) -> Result<f64, AuditError> {
        let mut var = 0.0;
        for g in Group::BOTH {
            let s = self.stratum(g, true)?;
            let m = s.mean(s.any_offer);
            var += (s.mean(s.any_offer_sq) - m * m).max(0.0) / s.weight;
        }
        Ok(var.sqrt())
    }

    /// Standard error of the deserving welfare gap.
    pub fn welfare_gap_standard_error(&self) -> Result<f64, AuditError> {
        let mut var = 0.0;
        for g in Group::BOTH {
            let s = self.stratum(g, true)?;
            let m = s.mean(s.welfare);
            var += (s.mean(s.welfare_sq) - m * m).max(0.0) / s.weight;
        }
        Ok(var.sqrt())
    }

    /// Every level. Needs all four (group, label) strata. A lender's
    /// per-group rates use only rows it serves; a lender that serves no row
    /// of a stratum in one group contributes no gap for that stratum.
    pub fn levels(&self) -> Result<FairnessLevels<f64>, AuditError> {
        let mut st = [[&self.strata[0][0]; 2]; 2];
        for g in Group::BOTH {
            for label in [false, true] {
                st[g.index()][usize::from(label)] = self.stratum(g, label)?;
            }
        }
        let any = |g: Group, y: bool| {
            let s = st[g.index()][usize::from(y)];
            s.mean(s.any_offer)
        };
        let approval = |g: Group, f: &dyn Fn(&Stratum) -> f64| {
            let (neg, pos) = (st[g.index()][0], st[g.index()][1]);
            (f(neg) + f(pos)) / (neg.weight + pos.weight)
        };

        let offer_gap = any(Group::Zero, true) - any(Group::One, true);
        let neg_gap = any(Group::Zero, false) - any(Group::One, false);
        let welfare_gap = self.welfare(Group::Zero, true)? - self.welfare(Group::One, true)?;
        let dpc = approval(Group::Zero, &|s| s.any_offer) - approval(Group::One, &|s| s.any_offer);

        let mut eo = Vec::with_capacity(self.n_lenders);
        let mut ed = Vec::with_capacity(self.n_lenders);
        let mut dp = Vec::with_capacity(self.n_lenders);
        for l in 0..self.n_lenders {
            let gap = |y: bool| {
                let rate = |g: Group| st[g.index()][usize::from(y)].lender_rate(l);
                match (rate(Group::Zero), rate(Group::One)) {
                    (Some(a), Some(b)) => (a - b).abs(),
                    _ => 0.0,
                }
            };
            let (tpr_gap, fpr_gap) = (gap(true), gap(false));
            eo.push(tpr_gap);
            ed.push(tpr_gap.max(fpr_gap));
            let lender_approval = |g: Group| {
                let (neg, pos) = (st[g.index()][0], st[g.index()][1]);
                let served = neg.served[l] + pos.served[l];
                (served > 0.0).then(|| (neg.offered[l] + pos.offered[l]) / served)
            };
            dp.push(
                match (lender_approval(Group::Zero), lender_approval(Group::One)) {
                    (Some(a), Some(b)) => (a - b).abs(),
                    _ => 0.0,
                },
            );
        }

        Ok(FairnessLevels {
            eo_per_lender: eo,
            ed_per_lender: ed,
            dp_per_lender: dp,
            eoc: offer_gap.abs(),
            veoc: welfare_gap.abs(),
            edc: offer_gap.abs().max(neg_gap.abs()),
            dpc: dpc.abs(),
            offer_gap,
            welfare_gap,
        })
    }
}

/// Every empirical fairness level of `table`.
pub fn empirical_fairness(
    table: &PredictionTable,
    util: UtilityKind<f64>,
) -> Result<FairnessLevels<f64>, AuditError> {
    StrataSummary::from_table(table, util).levels()
}

/// Pairwise Pearson coefficients per group on deserving rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `matrices[a][l][m]`: coefficient between lenders `l` and `m` in
    /// group `a`, over deserving rows both serve.
    pub matrices: [Vec<Vec<f64>>; 2],
    /// Number of rows behind each coefficient.
    pub support: [Vec<Vec<usize>>; 2],
}

impl CorrelationReport {
    pub fn rho(&self, group: Group, l: usize, m: usize) -> f64 {
        self.matrices[group.index()][l][m]
    }
}

/// Pearson coefficients between lenders' offer indicators, per group, over
/// deserving rows served by both lenders of each pair. A randomized offer is
/// a Bernoulli draw with the row's probability, drawn independently across
/// lenders, so `E[B_l B_m]` is the mean of `p_l p_m` and `Var B_l` is
/// `m_l (1 - m_l)`. Moments use population normalization.
pub fn empirical_correlation(table: &PredictionTable) -> Result<CorrelationReport, AuditError> {
    let n = table.n_lenders();
    let mut matrices = [vec![vec![1.0; n]; n], vec![vec![1.0; n]; n]];
    let mut support = [vec![vec![0usize; n]; n], vec![vec![0usize; n]; n]];
    for g in Group::BOTH {
        let deserving: Vec<_> = table
            .rows()
            .iter()
            .filter(|r| r.group == g && r.label)
            .collect();
        for l in 0..n {
            for m in l..n {
                let rows: Vec<_> = deserving
                    .iter()
                    .filter(|r| r.served[l] && r.served[m])
                    .collect();
                let count = rows.len();
                support[g.index()][l][m] = count;
                support[g.index()][m][l] = count;
                if count < 2 {
                    return Err(AuditError::InsufficientRows {
                        group: g,
                        lenders: (l, m),
                    });
                }
                let c = count as f64;
                let (mut sl, mut sm, mut slm) = (0.0, 0.0, 0.0);
                for r in &rows {
                    let (pl, pm) = (r.offer_prob[l], r.offer_prob[m]);
                    sl += pl;
                    sm += pm;
                    slm += if l == m { pl } else { pl * pm };
                }
                let (ml, mm) = (sl / c, sm / c);
                let (vl, vm) = (ml * (1.0 - ml), mm * (1.0 - mm));
                if vl <= 0.0 {
                    return Err(AuditError::DegenerateVariance {
                        group: g,
                        lender: l,
                    });
                }
                if vm <= 0.0 {
                    return Err(AuditError::DegenerateVariance {
                        group: g,
                        lender: m,
                    });
                }
                if l != m {
                    let rho = (slm / c - ml * mm) / (vl * vm).sqrt();
                    matrices[g.index()][l][m] = rho;
                    matrices[g.index()][m][l] = rho;
                }
            }
        }
    }
    Ok(CorrelationReport { matrices, support })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::PredictionRow;

    fn row(id: &str, group: Group, label: bool, probs: &[f64]) -> PredictionRow {
        PredictionRow {
            id: id.into(),
            group,
            label,
            served: vec![true; probs.len()],
            offer_prob: probs.to_vec(),
        }
    }

    #[test]
    fn offer_count_head_matches_enumeration() {
        let probs = [0.3, 0.5, 0.9];
        let mut none = 0.0;
        let mut one = 0.0;
        for o in 0u32..8 {
            let p: f64 = (0..3)
                .map(|l| {
                    if o & (1 << l) != 0 {
                        probs[l]
                    } else {
                        1.0 - probs[l]
                    }
                })
                .product();
            match o.count_ones() {
                0 => none += p,
                1 => one += p,
                _ => {}
            }
        }
        let (n0, n1) = offer_count_head(&probs);
        assert!((n0 - none).abs() < 1e-15 && (n1 - one).abs() < 1e-15);
    }

    #[test]
    fn missing_stratum_is_named() {
        let rows = vec![
            row("a", Group::Zero, true, &[1.0]),
            row("b", Group::Zero, false, &[0.0]),
            row("c", Group::One, true, &[1.0]),
        ];
        let t = PredictionTable::new(1, rows).unwrap();
        assert_eq!(
            empirical_fairness(&t, UtilityKind::at_least_one()),
            Err(AuditError::EmptyGroup {
                group: Group::One,
                label: false
            })
        );
    }

    #[test]
    fn unserved_rows_count_as_no_offer_but_not_toward_lender_rates() {
        let mut rows = vec![
            row("a", Group::Zero, true, &[1.0, 0.0]),
            row("b", Group::One, true, &[0.0, 1.0]),
            row("c", Group::Zero, false, &[0.0, 0.0]),
            row("d", Group::One, false, &[0.0, 0.0]),
        ];
        rows[0].served = vec![true, false];
        rows[2].served = vec![true, false];
        let t = PredictionTable::new(2, rows).unwrap();
        let lv = empirical_fairness(&t, UtilityKind::at_least_one()).unwrap();
        assert_eq!(lv.eoc, 0.0);
        // Lender 2 serves only group 1, so it has no group gap.
        assert_eq!(lv.eo_per_lender, vec![1.0, 0.0]);
    }

    #[test]
    fn shared_classifier_has_unit_correlation() {
        let mut rows = Vec::new();
        for (i, p) in [0.0, 1.0, 1.0, 0.0, 1.0].iter().enumerate() {
            rows.push(row(&format!("a{i}"), Group::Zero, true, &[*p, *p]));
            rows.push(row(&format!("b{i}"), Group::One, true, &[*p, *p]));
        }
        let t = PredictionTable::new(2, rows).unwrap();
        let c = empirical_correlation(&t).unwrap();
        for g in Group::BOTH {
            assert!((c.rho(g, 0, 1) - 1.0).abs() < 1e-12);
            assert_eq!(c.rho(g, 1, 1), 1.0);
        }
    }

    #[test]
    fn constant_lender_has_degenerate_variance() {
        let mut rows = Vec::new();
        for (i, p) in [0.0, 1.0, 1.0].iter().enumerate() {
            rows.push(row(&format!("a{i}"), Group::Zero, true, &[1.0, *p]));
            rows.push(row(&format!("b{i}"), Group::One, true, &[*p, *p]));
        }
        let t = PredictionTable::new(2, rows).unwrap();
        assert_eq!(
            empirical_correlation(&t),
            Err(AuditError::DegenerateVariance {
                group: Group::Zero,
                lender: 0
            })
        );
    }
}
