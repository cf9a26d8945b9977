use crate::fairness::{
    check_correlation, correlation_feasible_range, FairnessError, OverlapRow, Tolerances,
};
use crate::scalar::{is_probability, lit, to_f64, Real, Scalar};

use super::{lender_bit, EcosystemModel, JointPmf, ModelError};

fn check_rate<T: Scalar>(name: &'static str, x: T) -> Result<(), ModelError> {
    if is_probability(x) {
        Ok(())
    } else {
        Err(ModelError::InvalidProbability {
            name,
            value: to_f64(x),
        })
    }
}

/// Two-lender pmf (deserving side) with miss rates `beta1`, `beta2` and
/// joint miss mass `both_miss`.
pub fn pair_pmf_from_both_miss<T: Scalar>(
    beta1: T,
    beta2: T,
    both_miss: T,
) -> Result<JointPmf<T>, ModelError> {
    check_rate("beta1", beta1)?;
    check_rate("beta2", beta2)?;
    let one = T::one();
    // index bits: lender 1 is the high bit.
    JointPmf::from_cells(
        2,
        vec![
            both_miss,
            beta1 - both_miss,
            beta2 - both_miss,
            one - beta1 - beta2 + both_miss,
        ],
    )
}

/// Two-lender pmf whose miss indicators have Pearson correlation `rho`.
pub fn pair_pmf_from_correlation<T: Real>(
    beta1: T,
    beta2: T,
    rho: T,
) -> Result<JointPmf<T>, ModelError> {
    check_correlation(beta1, beta2, rho, lit(Tolerances::default().feasibility))?;
    let s = (beta1 * (T::one() - beta1) * beta2 * (T::one() - beta2)).sqrt();
    let both_miss = rho * s + beta1 * beta2;
    pair_pmf_from_both_miss(beta1, beta2, both_miss).map_err(|e| match e {
        ModelError::NegativeCell { .. } => {
            let range = correlation_feasible_range(beta1, beta2).expect("checked above");
            ModelError::Fairness(FairnessError::InfeasibleCorrelation {
                rho: to_f64(rho),
                lo: to_f64(range.lo),
                hi: to_f64(range.hi),
            })
        }
        other => other,
    })
}

/// Pearson correlation between lenders `a` and `b` under `pmf`, or `None`
/// when either output is constant.
pub fn pearson<T: Real>(pmf: &JointPmf<T>, a: usize, b: usize) -> Option<T> {
    let (pa, pb) = (pmf.offer_rate(a), pmf.offer_rate(b));
    let mask = pmf.lender_bit(a) | pmf.lender_bit(b);
    let both = pmf
        .iter()
        .filter(|(o, _)| o & mask == mask)
        .fold(T::zero(), |acc, (_, p)| acc + p);
    let var = pa * (T::one() - pa) * pb * (T::one() - pb);
    if var <= T::zero() {
        return None;
    }
    Some((both - pa * pb) / var.sqrt())
}

/// Independent outputs with the given offer probabilities.
pub fn independent_pmf<T: Scalar>(offer_probs: &[T]) -> Result<JointPmf<T>, ModelError> {
    let n = offer_probs.len();
    for &p in offer_probs {
        check_rate("offer_prob", p)?;
    }
    if n == 0 || n > super::MAX_LENDERS {
        return Err(ModelError::TooManyLenders(n));
    }
    let cells = (0..1u32 << n)
        .map(|o| {
            offer_probs
                .iter()
                .enumerate()
                .fold(T::one(), |acc, (l, &p)| {
                    if o & lender_bit(n, l) != 0 {
                        acc * p
                    } else {
                        acc * (T::one() - p)
                    }
                })
        })
        .collect();
    JointPmf::from_cells(n, cells)
}

/// Builds a pmf from a coupling on the unit interval: `offer_sets[l]` lists
/// the half-open segments of `[0, 1)` on which lender `l` outputs 1.
fn interval_pmf<T: Scalar>(offer_sets: &[Vec<(T, T)>]) -> Result<JointPmf<T>, ModelError> {
    let n = offer_sets.len();
    let mut cuts = vec![T::zero(), T::one()];
    for segs in offer_sets {
        for &(lo, hi) in segs {
            cuts.push(lo);
            cuts.push(hi);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("ordered scalars"));
    cuts.dedup();
    let two = T::one() + T::one();
    let mut cells = vec![T::zero(); 1 << n];
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = (lo + hi) / two;
        let outputs = offer_sets.iter().enumerate().fold(0u32, |acc, (l, segs)| {
            if segs.iter().any(|&(a, b)| a <= mid && mid < b) {
                acc | lender_bit(n, l)
            } else {
                acc
            }
        });
        cells[outputs as usize] = cells[outputs as usize] + (hi - lo);
    }
    JointPmf::from_cells(n, cells)
}

/// Extremal couplings of `n` miss indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    /// Nested miss sets: all lenders miss together as often as possible.
    Max,
    /// Correct sets laid out disjointly: joint misses are as rare as possible.
    Min,
}

/// Deserving-side pmf with marginal miss rates `betas` and extremal all-miss
/// mass: `min(beta)` for [`Overlap::Max`], `max{0, sum(beta) - (n - 1)}` for
/// [`Overlap::Min`].
pub fn extremal_pmf<T: Scalar>(betas: &[T], mode: Overlap) -> Result<JointPmf<T>, ModelError> {
    if betas.len() < 2 {
        return Err(FairnessError::TooFewClassifiers {
            min: 2,
            got: betas.len(),
        }
        .into());
    }
    for &b in betas {
        check_rate("beta", b)?;
    }
    let one = T::one();
    let sets: Vec<Vec<(T, T)>> = match mode {
        Overlap::Max => betas.iter().map(|&b| vec![(b, one)]).collect(),
        Overlap::Min => {
            let mut start = T::zero();
            betas
                .iter()
                .map(|&b| {
                    let len = one - b;
                    let end = start + len;
                    let segs = if end <= one {
                        vec![(start, end)]
                    } else {
                        vec![(start, one), (T::zero(), end - one)]
                    };
                    start = if end >= one { end - one } else { end };
                    segs
                })
                .collect()
        }
    };
    interval_pmf(&sets)
}

/// Example-1 monoculture: on group 0 every lender uses one shared
/// classifier, on group 1 the lenders miss independently. Returns the
/// deserving-side pmfs `(group 0, group 1)`.
pub fn monoculture_pmf<T: Scalar>(
    beta: T,
    n: usize,
) -> Result<(JointPmf<T>, JointPmf<T>), ModelError> {
    if n < 2 {
        return Err(FairnessError::TooFewClassifiers { min: 2, got: n }.into());
    }
    check_rate("beta", beta)?;
    let shared = extremal_pmf(&vec![beta; n], Overlap::Max)?;
    let independent = independent_pmf(&vec![T::one() - beta; n])?;
    Ok((shared, independent))
}

/// Two lenders with offer probabilities `offer1`, `offer2` that randomize
/// independently on the shared pool and output 0 for borrowers they do not
/// serve.
fn overlap_pmf_from_offers<T: Scalar>(
    offer1: T,
    offer2: T,
    row: &OverlapRow<T>,
) -> Result<JointPmf<T>, ModelError> {
    row.validate()?;
    let one = T::one();
    let only1 = row.served_by_1 - row.served_by_both;
    let only2 = row.served_by_2 - row.served_by_both;
    let both = row.served_by_both;
    JointPmf::from_cells(
        2,
        vec![
            only1 * (one - offer1)
                + only2 * (one - offer2)
                + both * (one - offer1) * (one - offer2),
            only2 * offer2 + both * (one - offer1) * offer2,
            only1 * offer1 + both * offer1 * (one - offer2),
            both * offer1 * offer2,
        ],
    )
}

/// Deserving-side pmf of two uncorrelated lenders with miss rates `beta1`,
/// `beta2` serving the pools described by `row`.
pub fn overlap_pmf<T: Scalar>(
    beta1: T,
    beta2: T,
    row: &OverlapRow<T>,
) -> Result<JointPmf<T>, ModelError> {
    check_rate("beta1", beta1)?;
    check_rate("beta2", beta2)?;
    overlap_pmf_from_offers(T::one() - beta1, T::one() - beta2, row)
}

/// Full model for two uncorrelated lenders on overlapping pools. The
/// non-deserving side uses the false-positive rates `alpha1`, `alpha2` with
/// the same serving structure and independent randomization.
pub fn overlap_model<T: Scalar>(
    betas: [T; 2],
    alphas: [T; 2],
    rows: [OverlapRow<T>; 2],
    base_rates: [T; 2],
) -> Result<EcosystemModel<T>, ModelError> {
    check_rate("alpha1", alphas[0])?;
    check_rate("alpha2", alphas[1])?;
    EcosystemModel::new(
        overlap_pmf(betas[0], betas[1], &rows[0])?,
        overlap_pmf(betas[0], betas[1], &rows[1])?,
        overlap_pmf_from_offers(alphas[0], alphas[1], &rows[0])?,
        overlap_pmf_from_offers(alphas[0], alphas[1], &rows[1])?,
        base_rates,
    )
}
