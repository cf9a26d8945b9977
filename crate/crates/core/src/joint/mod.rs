//! Exact joint distributions of `n` competing classifiers' outputs.
//!
//! A [`JointPmf`] is the distribution of the output vector `b ∈ {0,1}^n`
//! conditional on one (group, label) stratum; an [`EcosystemModel`] holds the
//! four conditional pmfs plus the group base rates and is the analytic ground
//! truth every empirical quantity is compared against.
//!
//! Output vectors are encoded as integers whose binary representation,
//! written with `n` digits, lists lender 1 first: for `n = 2` the index `0b10`
//! means lender 1 offers and lender 2 does not.

mod construct;
mod json;
mod levels;
mod sample;

pub use construct::{
    extremal_pmf, independent_pmf, monoculture_pmf, overlap_model, overlap_pmf,
    pair_pmf_from_both_miss, pair_pmf_from_correlation, pearson, Overlap,
};
pub use json::ModelDocument;
pub use levels::pmf_fairness_levels;
pub use sample::{batch_to_table, expand_exact, sample, SampleBatch, StratumCell};

use crate::fairness::FairnessError;
use crate::group::Group;
use crate::scalar::{is_probability, lit, to_f64, Scalar};

/// Largest lender count handled by exact enumeration.
pub const MAX_LENDERS: usize = 16;

const CLAMP_BELOW: f64 = 1e-15;
const RENORMALIZE_WITHIN: f64 = 1e-9;
// Totals this close to one are left alone so that stored pmfs round-trip.
const EXACT_WITHIN: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error("cell {index:#b} has negative mass {value}")]
    NegativeCell { index: u32, value: f64 },
    #[error("cell masses sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("expected {expected} cells for {n} lenders, got {got}")]
    WrongLength {
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0} lenders requested; exact enumeration supports 1..={MAX_LENDERS}")]
    TooManyLenders(usize),
    #[error("pmfs disagree on the number of lenders")]
    LenderCountMismatch,
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("cell ({group}, y={label}, {outputs:#b}) expands to non-integral count {count}")]
    NonIntegralExpansion {
        group: Group,
        label: bool,
        outputs: u32,
        count: f64,
    },
    #[error("malformed model document: {0}")]
    Document(String),
}

/// Distribution of the lenders' output vector within one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf<T> {
    n: usize,
    probs: Vec<T>,
}

impl<T: Scalar> JointPmf<T> {
    /// Validates and normalises raw cell masses.
    ///
    /// Cells within `1e-15` below zero are clamped; a total within `1e-9` of
    /// one is renormalised; anything else is rejected.
    pub fn from_cells(n: usize, mut probs: Vec<T>) -> Result<Self, ModelError> {
        if n == 0 || n > MAX_LENDERS {
            return Err(ModelError::TooManyLenders(n));
        }
        let expected = 1usize << n;
        if probs.len() != expected {
            return Err(ModelError::WrongLength {
                n,
                expected,
                got: probs.len(),
            });
        }
        let floor: T = -lit::<T>(CLAMP_BELOW);
        for (i, p) in probs.iter_mut().enumerate() {
            if *p < T::zero() {
                if *p < floor {
                    return Err(ModelError::NegativeCell {
                        index: i as u32,
                        value: to_f64(*p),
                    });
                }
                *p = T::zero();
            }
        }
        let total = probs.iter().fold(T::zero(), |acc, &p| acc + p);
        let gap = (total - T::one()).abs();
        if gap > lit(EXACT_WITHIN) {
            if gap > lit(RENORMALIZE_WITHIN) {
                return Err(ModelError::NotNormalized(to_f64(total)));
            }
            for p in probs.iter_mut() {
                *p = *p / total;
            }
        }
        Ok(Self { n, probs })
    }

    /// All mass on a single output vector.
    pub fn point(n: usize, outputs: u32) -> Result<Self, ModelError> {
        if n == 0 || n > MAX_LENDERS {
            return Err(ModelError::TooManyLenders(n));
        }
        let mut probs = vec![T::zero(); 1 << n];
        probs[outputs as usize] = T::one();
        Ok(Self { n, probs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[T] {
        &self.probs
    }

    pub fn cell(&self, outputs: u32) -> T {
        self.probs[outputs as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, T)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (i as u32, p))
    }

    /// Bit of `lender` (0-based) within an output index.
    pub fn lender_bit(&self, lender: usize) -> u32 {
        lender_bit(self.n, lender)
    }

    /// Probability that `lender` outputs 1.
    pub fn offer_rate(&self, lender: usize) -> T {
        let bit = self.lender_bit(lender);
        self.iter()
            .filter(|(b, _)| b & bit != 0)
            .fold(T::zero(), |acc, (_, p)| acc + p)
    }

    /// Probability that no lender outputs 1.
    pub fn no_offer(&self) -> T {
        self.probs[0]
    }

    /// Probability that at least one lender outputs 1.
    pub fn any_offer(&self) -> T {
        T::one() - self.probs[0]
    }

    /// Replaces lender `lender`'s output `b` by an independent draw that is
    /// 1 with probability `emit[b]`.
    pub fn randomize_lender(&self, lender: usize, emit: [T; 2]) -> Self {
        let bit = self.lender_bit(lender);
        let mut probs = vec![T::zero(); self.probs.len()];
        for (b, p) in self.iter() {
            let on = emit[usize::from(b & bit != 0)];
            probs[(b | bit) as usize] = probs[(b | bit) as usize] + p * on;
            probs[(b & !bit) as usize] = probs[(b & !bit) as usize] + p * (T::one() - on);
        }
        Self { n: self.n, probs }
    }
}

pub(crate) fn lender_bit(n: usize, lender: usize) -> u32 {
    assert!(lender < n, "lender {lender} out of range for {n} lenders");
    1 << (n - 1 - lender)
}

/// Output vector as a bitstring, lender 1 first.
pub fn outputs_to_bits(n: usize, outputs: u32) -> String {
    (0..n)
        .map(|l| {
            if outputs & lender_bit(n, l) != 0 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

/// Parses a bitstring written lender 1 first.
pub fn bits_to_outputs(bits: &str) -> Option<u32> {
    if bits.is_empty() || bits.len() > MAX_LENDERS {
        return None;
    }
    bits.chars().try_fold(0u32, |acc, c| match c {
        '0' => Some(acc << 1),
        '1' => Some((acc << 1) | 1),
        _ => None,
    })
}

/// Conditional output distributions for both groups and labels, with the
/// group base rates `Pr[Y = 1 | A = a]` and group shares `Pr[A = a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcosystemModel<T> {
    /// Indexed `[group][label]`.
    pmfs: [[JointPmf<T>; 2]; 2],
    base_rates: [T; 2],
    group_shares: [T; 2],
}

impl<T: Scalar> EcosystemModel<T> {
    pub fn new(
        pos_g0: JointPmf<T>,
        pos_g1: JointPmf<T>,
        neg_g0: JointPmf<T>,
        neg_g1: JointPmf<T>,
        base_rates: [T; 2],
    ) -> Result<Self, ModelError> {
        let n = pos_g0.n();
        if [&pos_g1, &neg_g0, &neg_g1].iter().any(|p| p.n() != n) {
            return Err(ModelError::LenderCountMismatch);
        }
        for &r in &base_rates {
            if !is_probability(r) {
                return Err(ModelError::InvalidProbability {
                    name: "base_rate",
                    value: to_f64(r),
                });
            }
        }
        let half = T::one() / (T::one() + T::one());
        Ok(Self {
            pmfs: [[neg_g0, pos_g0], [neg_g1, pos_g1]],
            base_rates,
            group_shares: [half, half],
        })
    }

    /// Sets `Pr[A = 0]`, `Pr[A = 1]` (used only for sampling).
    pub fn with_group_shares(mut self, shares: [T; 2]) -> Result<Self, ModelError> {
        if !shares.iter().all(|&s| is_probability(s)) || shares[0] + shares[1] != T::one() {
            return Err(ModelError::InvalidProbability {
                name: "group_shares",
                value: to_f64(shares[0]),
            });
        }
        self.group_shares = shares;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.pmfs[0][1].n()
    }

    pub fn pmf(&self, group: Group, label: bool) -> &JointPmf<T> {
        &self.pmfs[group.index()][usize::from(label)]
    }

    pub fn base_rate(&self, group: Group) -> T {
        self.base_rates[group.index()]
    }

    pub fn base_rates(&self) -> [T; 2] {
        self.base_rates
    }

    pub fn group_shares(&self) -> [T; 2] {
        self.group_shares
    }

    /// Applies `f` to every conditional pmf.
    pub fn map_pmfs(&self, mut f: impl FnMut(Group, bool, &JointPmf<T>) -> JointPmf<T>) -> Self {
        let mut pmf = |g: Group, y: bool| f(g, y, self.pmf(g, y));
        Self {
            pmfs: [
                [pmf(Group::Zero, false), pmf(Group::Zero, true)],
                [pmf(Group::One, false), pmf(Group::One, true)],
            ],
            base_rates: self.base_rates,
            group_shares: self.group_shares,
        }
    }

    pub fn to_f64(&self) -> EcosystemModel<f64> {
        let conv = |p: &JointPmf<T>| JointPmf {
            n: p.n,
            probs: p.probs.iter().map(|&x| to_f64(x)).collect(),
        };
        EcosystemModel {
            pmfs: [
                [conv(&self.pmfs[0][0]), conv(&self.pmfs[0][1])],
                [conv(&self.pmfs[1][0]), conv(&self.pmfs[1][1])],
            ],
            base_rates: self.base_rates.map(to_f64),
            group_shares: self.group_shares.map(to_f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;

    #[test]
    fn bit_order_lists_lender_one_first() {
        assert_eq!(outputs_to_bits(3, 0b100), "100");
        assert_eq!(bits_to_outputs("100"), Some(0b100));
        assert_eq!(bits_to_outputs("012"), None);
        let p = JointPmf::<f64>::point(3, 0b100).unwrap();
        assert_eq!(p.offer_rate(0), 1.0);
        assert_eq!(p.offer_rate(2), 0.0);
    }

    #[test]
    fn tiny_negative_cells_are_clamped_and_sums_renormalized() {
        let p = JointPmf::from_cells(1, vec![-1e-16, 1.0 + 1e-12]).unwrap();
        assert_eq!(p.cell(0), 0.0);
        assert_eq!(p.cell(1), 1.0);
        assert!(matches!(
            JointPmf::from_cells(1, vec![-1e-6, 1.0]),
            Err(ModelError::NegativeCell { .. })
        ));
        assert!(matches!(
            JointPmf::from_cells(1, vec![0.5, 0.6]),
            Err(ModelError::NotNormalized(_))
        ));
        assert!(matches!(
            JointPmf::<f64>::from_cells(2, vec![1.0]),
            Err(ModelError::WrongLength { .. })
        ));
        assert!(matches!(
            JointPmf::<f64>::point(17, 0),
            Err(ModelError::TooManyLenders(17))
        ));
    }

    #[test]
    fn randomizing_a_lender_keeps_mass_and_moves_its_marginal() {
        let half = Rational::new(1, 2);
        let p = JointPmf::from_cells(
            2,
            vec![
                Rational::new(1, 10),
                Rational::new(1, 10),
                Rational::new(1, 10),
                Rational::new(7, 10),
            ],
        )
        .unwrap();
        // Flip lender 1's misses to offers with probability 1/2.
        let q = p.randomize_lender(0, [half, Rational::from_integer(1)]);
        assert_eq!(
            q.cells().iter().copied().sum::<Rational>(),
            Rational::from_integer(1)
        );
        assert_eq!(q.offer_rate(0), Rational::new(9, 10));
        assert_eq!(q.offer_rate(1), p.offer_rate(1));
        assert_eq!(q.no_offer(), Rational::new(1, 20));
    }
}
