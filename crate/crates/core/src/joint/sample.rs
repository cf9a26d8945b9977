use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audit::{PredictionRow, PredictionTable, StrataSummary};
use crate::fairness::UtilityKind;
use crate::group::Group;
use crate::scalar::{to_f64, Scalar};

use super::{lender_bit, EcosystemModel, ModelError};

/// Individuals drawn per generator stream. Stream `c` covers indices
/// `c * CHUNK .. (c + 1) * CHUNK`, so any partition of the index range
/// reproduces the same draws.
const CHUNK: u64 = 1 << 16;

/// One cell of the sampling space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumCell {
    pub group: Group,
    pub label: bool,
    pub outputs: u32,
}

/// Counts of sampled (or exactly expanded) individuals per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub n_lenders: usize,
    pub counts: BTreeMap<StratumCell, u64>,
    pub total: u64,
    pub seed: u64,
}

impl SampleBatch {
    /// Stratum aggregates without expanding into rows.
    pub fn summary(&self, util: UtilityKind<f64>) -> StrataSummary {
        let mut summary = StrataSummary::new(self.n_lenders, util);
        let mut probs = vec![0.0; self.n_lenders];
        for (cell, &count) in &self.counts {
            for (l, p) in probs.iter_mut().enumerate() {
                *p = if cell.outputs & lender_bit(self.n_lenders, l) != 0 {
                    1.0
                } else {
                    0.0
                };
            }
            summary.add(cell.group, cell.label, &probs, count as f64);
        }
        summary
    }
}

fn cells_with_weights<T: Scalar>(model: &EcosystemModel<T>) -> Vec<(StratumCell, f64)> {
    let mut out = Vec::new();
    for g in Group::BOTH {
        let share = to_f64(model.group_shares()[g.index()]);
        let pi = to_f64(model.base_rate(g));
        for label in [false, true] {
            let w = share * if label { pi } else { 1.0 - pi };
            for (outputs, p) in model.pmf(g, label).iter() {
                out.push((
                    StratumCell {
                        group: g,
                        label,
                        outputs,
                    },
                    w * to_f64(p),
                ));
            }
        }
    }
    out
}

/// Draws `total` individuals from `model`. Deterministic in `seed`.
pub fn sample<T: Scalar>(
    model: &EcosystemModel<T>,
    total: u64,
    seed: u64,
) -> Result<SampleBatch, ModelError> {
    if total == 0 {
        return Err(ModelError::EmptySample);
    }
    let cells = cells_with_weights(model);
    let mut cdf = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for (_, w) in &cells {
        acc += w;
        cdf.push(acc);
    }
    let chunks = total.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = CHUNK.min(total - c * CHUNK);
            let mut local = vec![0u64; cells.len()];
            for _ in 0..len {
                let u = rng.random::<f64>() * acc;
                let idx = cdf.partition_point(|&x| x <= u).min(cells.len() - 1);
                local[idx] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; cells.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let counts = cells
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c > 0)
        .map(|((cell, _), c)| (*cell, c))
        .collect();
    Ok(SampleBatch {
        n_lenders: model.n(),
        counts,
        total,
        seed,
    })
}

/// Expands `model` into exact counts: each group contributes
/// `rows_per_group` individuals split by its base rate, and every cell gets
/// its proportional share. Fails if some share is not an integer.
pub fn expand_exact<T: Scalar>(
    model: &EcosystemModel<T>,
    rows_per_group: u64,
) -> Result<SampleBatch, ModelError> {
    if rows_per_group == 0 {
        return Err(ModelError::EmptySample);
    }
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for g in Group::BOTH {
        let pi = to_f64(model.base_rate(g));
        for label in [false, true] {
            let stratum = rows_per_group as f64 * if label { pi } else { 1.0 - pi };
            for (outputs, p) in model.pmf(g, label).iter() {
                let exact = stratum * to_f64(p);
                let count = exact.round();
                if (exact - count).abs() > 1e-6 * exact.max(1.0) {
                    return Err(ModelError::NonIntegralExpansion {
                        group: g,
                        label,
                        outputs,
                        count: exact,
                    });
                }
                if count > 0.0 {
                    counts.insert(
                        StratumCell {
                            group: g,
                            label,
                            outputs,
                        },
                        count as u64,
                    );
                    total += count as u64;
                }
            }
        }
    }
    Ok(SampleBatch {
        n_lenders: model.n(),
        counts,
        total,
        seed: 0,
    })
}

/// One row per individual, every lender serving everyone with a
/// deterministic offer indicator.
pub fn batch_to_table(batch: &SampleBatch) -> PredictionTable {
    let n = batch.n_lenders;
    let mut rows = Vec::with_capacity(batch.total as usize);
    for (cell, &count) in &batch.counts {
        let probs: Vec<f64> = (0..n)
            .map(|l| {
                if cell.outputs & lender_bit(n, l) != 0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for _ in 0..count {
            rows.push(PredictionRow {
                id: rows.len().to_string(),
                group: cell.group,
                label: cell.label,
                served: vec![true; n],
                offer_prob: probs.clone(),
            });
        }
    }
    PredictionTable::new(n, rows).expect("expanded rows are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::{independent_pmf, monoculture_pmf};

    fn monoculture_model() -> EcosystemModel<f64> {
        let (g0, g1) = monoculture_pmf(0.1, 2).unwrap();
        let neg = independent_pmf(&[0.1, 0.1]).unwrap();
        EcosystemModel::new(g0, g1, neg.clone(), neg, [0.5, 0.5]).unwrap()
    }

    #[test]
    fn same_seed_same_batch() {
        let m = monoculture_model();
        let a = sample(&m, 200_000, 7).unwrap();
        let b = sample(&m, 200_000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.values().sum::<u64>(), 200_000);
        let c = sample(&m, 200_000, 8).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert_eq!(
            sample(&monoculture_model(), 0, 1),
            Err(ModelError::EmptySample)
        );
    }

    #[test]
    fn exact_expansion_needs_integral_counts() {
        let m = monoculture_model();
        let batch = expand_exact(&m, 1000).unwrap();
        assert_eq!(batch.total, 2000);
        // 0.1 * 0.9 * 0.9 * 500 is not an integer.
        assert!(matches!(
            expand_exact(&m, 10),
            Err(ModelError::NonIntegralExpansion { .. })
        ));
    }

    #[test]
    fn table_rows_match_counts() {
        let batch = expand_exact(&monoculture_model(), 1000).unwrap();
        let table = batch_to_table(&batch);
        assert_eq!(table.rows().len(), 2000);
        let all_miss = table
            .rows()
            .iter()
            .filter(|r| r.group == Group::Zero && r.label && r.offer_prob.iter().all(|&p| p == 0.0))
            .count();
        assert_eq!(all_miss, 50);
    }
}
