//! Optimal derived Equal-Opportunity classifiers.
//!
//! A derived classifier sees only the group and the base prediction and
//! emits 1 with probability `p(a, ŷ)`. Among all such classifiers whose
//! true-positive rates agree across groups, [`fit_eo_policy`] returns one
//! with the least expected 0/1 loss. The feasible set is the unit box in
//! four coordinates cut by one linear equality, so an optimum sits at a
//! vertex: three coordinates at 0 or 1 and the fourth solving the equality.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditError, PredictionTable};
use crate::group::Group;
use crate::joint::EcosystemModel;
use crate::scalar::{is_probability, lit, to_f64, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PostprocessError {
    #[error("lender {} has no deserving rows in group {group}; true-positive rate is undefined", lender + 1)]
    UnfittableStratum { group: Group, lender: usize },
    #[error("lender {} has a randomized base prediction {value} on row {id:?}; fitting needs 0/1 predictions", lender + 1)]
    RandomizedBase {
        lender: usize,
        id: String,
        value: f64,
    },
    #[error("policy entry {key} = {value} is not a probability")]
    InvalidPolicy { key: String, value: f64 },
    #[error("malformed policy document: {0}")]
    Document(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// False- and true-positive rate of a classifier on one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint<T> {
    pub fpr: T,
    pub tpr: T,
}

/// `p[a][ŷ]`: probability of emitting 1 in group `a` when the base
/// classifier predicts `ŷ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedPolicy<T> {
    pub p: [[T; 2]; 2],
}

const POLICY_KEYS: [[&str; 2]; 2] = [["g0_pred0", "g0_pred1"], ["g1_pred0", "g1_pred1"]];

impl<T: Scalar> DerivedPolicy<T> {
    pub fn new(p: [[T; 2]; 2]) -> Result<Self, PostprocessError> {
        for (a, row) in p.iter().enumerate() {
            for (y, &v) in row.iter().enumerate() {
                if !is_probability(v) {
                    return Err(PostprocessError::InvalidPolicy {
                        key: POLICY_KEYS[a][y].into(),
                        value: to_f64(v),
                    });
                }
            }
        }
        Ok(Self { p })
    }

    /// Emits the base prediction unchanged.
    pub fn identity() -> Self {
        Self {
            p: [[T::zero(), T::one()], [T::zero(), T::one()]],
        }
    }

    pub fn emit(&self, group: Group, base: bool) -> T {
        self.p[group.index()][usize::from(base)]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    /// Offer probability after the policy, given the base offer probability.
    pub fn transform(&self, group: Group, base_prob: T) -> T {
        let [p0, p1] = self.p[group.index()];
        p1 * base_prob + p0 * (T::one() - base_prob)
    }

    /// Rate point of the derived classifier given the base one.
    pub fn derived_rates(&self, group: Group, base: RatePoint<T>) -> RatePoint<T> {
        RatePoint {
            fpr: self.transform(group, base.fpr),
            tpr: self.transform(group, base.tpr),
        }
    }

    pub fn to_f64(&self) -> DerivedPolicy<f64> {
        DerivedPolicy {
            p: self.p.map(|row| row.map(to_f64)),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDocument {
    p: BTreeMap<String, f64>,
}

impl DerivedPolicy<f64> {
    /// `{"p":{"g0_pred0":…,"g0_pred1":…,"g1_pred0":…,"g1_pred1":…}}`
    pub fn to_json(&self) -> String {
        let p = POLICY_KEYS
            .iter()
            .flatten()
            .zip(self.p.iter().flatten())
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        serde_json::to_string_pretty(&PolicyDocument { p }).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PostprocessError> {
        let doc: PolicyDocument =
            serde_json::from_str(s).map_err(|e| PostprocessError::Document(e.to_string()))?;
        if let Some(k) = doc
            .p
            .keys()
            .find(|k| !POLICY_KEYS.iter().flatten().any(|w| w == k))
        {
            return Err(PostprocessError::Document(format!("unknown entry {k:?}")));
        }
        let get = |k: &str| {
            doc.p
                .get(k)
                .copied()
                .ok_or_else(|| PostprocessError::Document(format!("missing entry {k:?}")))
        };
        Self::new([
            [get(POLICY_KEYS[0][0])?, get(POLICY_KEYS[0][1])?],
            [get(POLICY_KEYS[1][0])?, get(POLICY_KEYS[1][1])?],
        ])
    }
}

/// Probability mass of each (group, label, base prediction) cell of the
/// fitting distribution, indexed `[group][label][prediction]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumMasses<T> {
    pub mass: [[[T; 2]; 2]; 2],
}

impl<T: Scalar> StratumMasses<T> {
    /// Every (group, label) pair carries mass 1/4, split by the given rates.
    pub fn uniform(beta_g0: T, beta_g1: T, alpha_g0: T, alpha_g1: T) -> Self {
        let quarter = T::one() / lit(4.0);
        let one = T::one();
        let cell = |beta: T, alpha: T| {
            [
                [(one - alpha) * quarter, alpha * quarter],
                [beta * quarter, (one - beta) * quarter],
            ]
        };
        Self {
            mass: [cell(beta_g0, alpha_g0), cell(beta_g1, alpha_g1)],
        }
    }

    /// Masses implied by a model for lender `lender`'s marginal predictions.
    pub fn from_model(model: &EcosystemModel<T>, lender: usize) -> Self {
        let one = T::one();
        let mut mass = [[[T::zero(); 2]; 2]; 2];
        for g in Group::BOTH {
            let share = model.group_shares()[g.index()];
            let pi = model.base_rate(g);
            for y in [false, true] {
                let w = share * if y { pi } else { one - pi };
                let rate = model.pmf(g, y).offer_rate(lender);
                mass[g.index()][usize::from(y)] = [w * (one - rate), w * rate];
            }
        }
        Self { mass }
    }

    pub fn rates(&self, group: Group) -> RatePoint<T> {
        let m = &self.mass[group.index()];
        let frac = |s: &[T; 2]| {
            let total = s[0] + s[1];
            if total == T::zero() {
                T::zero()
            } else {
                s[1] / total
            }
        };
        RatePoint {
            fpr: frac(&m[0]),
            tpr: frac(&m[1]),
        }
    }
}

impl StratumMasses<f64> {
    /// Empirical fractions over the rows lender `lender` serves.
    pub fn from_table(table: &PredictionTable, lender: usize) -> Result<Self, PostprocessError> {
        if lender >= table.n_lenders() {
            return Err(AuditError::NoSuchLender {
                lender,
                n: table.n_lenders(),
            }
            .into());
        }
        let mut counts = [[[0u64; 2]; 2]; 2];
        for row in table.rows().iter().filter(|r| r.served[lender]) {
            let p = row.offer_prob[lender];
            if p != 0.0 && p != 1.0 {
                return Err(PostprocessError::RandomizedBase {
                    lender,
                    id: row.id.clone(),
                    value: p,
                });
            }
            counts[row.group.index()][usize::from(row.label)][usize::from(p == 1.0)] += 1;
        }
        let total: u64 = counts.iter().flatten().flatten().sum();
        let total = total.max(1) as f64;
        Ok(Self {
            mass: counts.map(|g| g.map(|y| y.map(|c| c as f64 / total))),
        })
    }
}

/// Expected 0/1 loss of `policy` under `masses`.
pub fn expected_loss<T: Scalar>(policy: &DerivedPolicy<T>, masses: &StratumMasses<T>) -> T {
    let one = T::one();
    let mut loss = T::zero();
    for a in 0..2 {
        for pred in 0..2 {
            let emit = policy.p[a][pred];
            loss = loss + masses.mass[a][0][pred] * emit + masses.mass[a][1][pred] * (one - emit);
        }
    }
    loss
}

/// True-positive rate of the derived classifier on `group`.
pub fn derived_tpr<T: Scalar>(
    policy: &DerivedPolicy<T>,
    masses: &StratumMasses<T>,
    group: Group,
) -> T {
    let [miss, hit] = masses.mass[group.index()][1];
    let [p0, p1] = policy.p[group.index()];
    (p0 * miss + p1 * hit) / (miss + hit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFitReport<T> {
    pub policy: DerivedPolicy<T>,
    /// Common true-positive rate of both groups.
    pub achieved_tpr: T,
    pub expected_loss: T,
    /// Feasible vertices compared.
    pub candidates_examined: usize,
    /// Some nonempty (group, label) stratum has a single base prediction.
    pub degenerate_base: bool,
}

/// Lexicographic comparison on `(p(0,0), p(0,1), p(1,0), p(1,1))`.
fn lex_less<T: Scalar>(a: &DerivedPolicy<T>, b: &DerivedPolicy<T>) -> bool {
    let (fa, fb) = (a.p.as_flattened(), b.p.as_flattened());
    for (x, y) in fa.iter().zip(fb) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Least-loss derived EO policy for the given stratum masses. Losses within
/// `tie` of the best are ties, resolved lexicographically.
pub fn fit_eo_policy_masses<T: Scalar>(
    masses: &StratumMasses<T>,
    lender: usize,
    tie: T,
) -> Result<PolicyFitReport<T>, PostprocessError> {
    let zero = T::zero();
    let one = T::one();
    let mut coef = [zero; 4];
    for g in Group::BOTH {
        let [miss, hit] = masses.mass[g.index()][1];
        let total = miss + hit;
        if total <= zero {
            return Err(PostprocessError::UnfittableStratum { group: g, lender });
        }
        // TPR(0) - TPR(1) = Σ coef[i] * p[i] over the flattened policy.
        let sign = if g == Group::Zero { one } else { -one };
        coef[2 * g.index()] = sign * miss / total;
        coef[2 * g.index() + 1] = sign * hit / total;
    }

    let mut best: Option<(T, DerivedPolicy<T>)> = None;
    let mut examined = 0;
    let mut consider = |flat: [T; 4]| {
        let policy = DerivedPolicy {
            p: [[flat[0], flat[1]], [flat[2], flat[3]]],
        };
        examined += 1;
        let loss = expected_loss(&policy, masses);
        let better = match &best {
            None => true,
            Some((b, bp)) => loss < *b - tie || (loss <= *b + tie && lex_less(&policy, bp)),
        };
        if better {
            best = Some((loss, policy));
        }
    };

    for free in 0..4 {
        if coef[free] == zero {
            continue;
        }
        for bits in 0u8..8 {
            let mut flat = [zero; 4];
            let mut rest = zero;
            let mut k = 0;
            for (i, slot) in flat.iter_mut().enumerate() {
                if i == free {
                    continue;
                }
                if bits & (1 << k) != 0 {
                    *slot = one;
                    rest = rest + coef[i];
                }
                k += 1;
            }
            let v = -rest / coef[free];
            if v >= zero && v <= one {
                flat[free] = v;
                consider(flat);
            }
        }
    }
    for bits in 0u8..16 {
        let flat: [T; 4] = std::array::from_fn(|i| if bits & (1 << i) != 0 { one } else { zero });
        let gap = flat
            .iter()
            .zip(&coef)
            .fold(zero, |acc, (&p, &c)| acc + p * c);
        if gap.abs() <= tie {
            consider(flat);
        }
    }

    let (loss, policy) = best.expect("the all-zero and all-one policies are always feasible");
    let degenerate_base = masses.mass.iter().flatten().any(|s| {
        let total = s[0] + s[1];
        total > zero && (s[0] == zero || s[1] == zero)
    });
    Ok(PolicyFitReport {
        policy,
        achieved_tpr: derived_tpr(&policy, masses, Group::Zero),
        expected_loss: loss,
        candidates_examined: examined,
        degenerate_base,
    })
}

/// Fits lender `lender`'s derived EO policy on the rows it serves in
/// `table`.
pub fn fit_eo_policy(
    table: &PredictionTable,
    lender: usize,
) -> Result<PolicyFitReport<f64>, PostprocessError> {
    let masses = StratumMasses::from_table(table, lender)?;
    fit_eo_policy_masses(&masses, lender, 1e-12)
}

/// One of the two vertex policies that equalize false-negative rates by
/// moving a single group.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Candidate<T> {
    pub policy: DerivedPolicy<T>,
    /// Fraction of the moved group's affected predictions that is flipped.
    pub flip_fraction: T,
    /// Flipped mass under the uniform distribution over (group, label).
    pub cost: T,
    /// False-negative rate both groups share afterwards.
    pub common_fn_rate: T,
}

/// The two vertex candidates for a base classifier with false-negative
/// rates `beta` and false-positive rates `alpha` per group. The first raises
/// the worse group's offers on negative predictions to reach the smaller
/// false-negative rate; the second withdraws the better group's positive
/// predictions to reach the larger one. Costs count flipped mass under the
/// uniform distribution, the second as `δ (α_better + 1 − β_worse) / 4`.
pub fn lemma1_candidates<T: Scalar>(
    beta_g0: T,
    beta_g1: T,
    alpha_g0: T,
    alpha_g1: T,
) -> Result<[Lemma1Candidate<T>; 2], PostprocessError> {
    let zero = T::zero();
    let one = T::one();
    let quarter = one / lit(4.0);
    let beta = [beta_g0, beta_g1];
    let alpha = [alpha_g0, alpha_g1];
    for (key, &v) in ["beta_g0", "beta_g1", "alpha_g0", "alpha_g1"]
        .iter()
        .zip(beta.iter().chain(&alpha))
    {
        if !is_probability(v) {
            return Err(PostprocessError::InvalidPolicy {
                key: (*key).into(),
                value: to_f64(v),
            });
        }
    }
    if beta_g0 == beta_g1 {
        let identity = Lemma1Candidate {
            policy: DerivedPolicy::identity(),
            flip_fraction: zero,
            cost: zero,
            common_fn_rate: beta_g0,
        };
        return Ok([identity.clone(), identity]);
    }
    let (worse, better) = if beta_g0 > beta_g1 { (0, 1) } else { (1, 0) };
    let gap = beta[worse] - beta[better];

    let lift = gap / beta[worse];
    let mut raise = DerivedPolicy::identity();
    raise.p[worse][0] = lift;
    let drop = gap / (one - beta[better]);
    let mut lower = DerivedPolicy::identity();
    lower.p[better][1] = one - drop;

    Ok([
        Lemma1Candidate {
            policy: raise,
            flip_fraction: lift,
            cost: lift * (one - alpha[worse] + beta[worse]) * quarter,
            common_fn_rate: beta[better],
        },
        Lemma1Candidate {
            policy: lower,
            flip_fraction: drop,
            cost: drop * (alpha[better] + one - beta[worse]) * quarter,
            common_fn_rate: beta[worse],
        },
    ])
}

/// Applies `policy` to lender `lender`'s offers in `table`. Other lenders and
/// rows the lender does not serve are unchanged.
pub fn apply_policy(
    policy: &DerivedPolicy<f64>,
    table: &PredictionTable,
    lender: usize,
) -> Result<PredictionTable, PostprocessError> {
    Ok(table.map_lender(lender, |row, old| {
        policy.transform(row.group, old).clamp(0.0, 1.0)
    })?)
}

/// Applies `policy` to lender `lender` in every stratum of `model`, with the
/// policy's randomization independent of everything else.
pub fn apply_policy_to_model<T: Scalar>(
    policy: &DerivedPolicy<T>,
    model: &EcosystemModel<T>,
    lender: usize,
) -> EcosystemModel<T> {
    model.map_pmfs(|g, _, pmf| pmf.randomize_lender(lender, policy.p[g.index()]))
}
