//! Closed-form fairness levels for ecosystems of competing classifiers.
//!
//! Two forces make individually fair classifiers unfair as an ecosystem:
//! group-dependent correlation between the lenders' errors, and
//! group-dependent overlap between the pools of borrowers they serve. The
//! functions here give the exact level of Equal Opportunity under
//! Competition (EOC), its welfare version (v-EOC) and the Demographic Parity
//! analogue (DPC) for both forces, together with the worst cases.
//!
//! Rates follow the usual convention: `beta` is a false-negative rate
//! `Pr[c = 0 | Y = 1]`, `eta` an approval probability `Pr[c = 1]`. All
//! levels are absolute gaps; signed gaps (group 0 minus group 1) are exposed
//! by the `*_gap` functions because the disadvantaged group can change with
//! the utility multiplier.

use serde::{Deserialize, Serialize};

use crate::scalar::{is_probability, lit, max, min, to_f64, Real, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FairnessError {
    #[error("{name} = {value} is not a probability")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("rate {0} is degenerate (0 or 1), Pearson correlation is undefined")]
    DegenerateRate(f64),
    #[error("correlation {rho} is outside the feasible range [{lo}, {hi}]")]
    InfeasibleCorrelation { rho: f64, lo: f64, hi: f64 },
    #[error("invalid overlap profile: {0}")]
    InvalidOverlap(String),
    #[error("utility multiplier k = {0} must be at least 1")]
    InvalidUtility(f64),
    #[error("need at least {min} classifiers, got {got}")]
    TooFewClassifiers { min: usize, got: usize },
}

/// Numerical tolerances used by identity checks and feasibility tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Agreement required between two routes to the same exact quantity.
    pub identity: f64,
    /// Slack granted to feasibility checks (Fréchet bounds, overlap sums).
    pub feasibility: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            identity: 1e-12,
            feasibility: 1e-9,
        }
    }
}

/// Per-group false-negative and false-positive rates of one classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfile<T> {
    pub fn_rate_g0: T,
    pub fn_rate_g1: T,
    pub fp_rate_g0: T,
    pub fp_rate_g1: T,
}

impl<T: Scalar> ErrorProfile<T> {
    pub fn new(
        fn_rate_g0: T,
        fn_rate_g1: T,
        fp_rate_g0: T,
        fp_rate_g1: T,
    ) -> Result<Self, FairnessError> {
        check_probability("fn_rate_g0", fn_rate_g0)?;
        check_probability("fn_rate_g1", fn_rate_g1)?;
        check_probability("fp_rate_g0", fp_rate_g0)?;
        check_probability("fp_rate_g1", fp_rate_g1)?;
        Ok(Self {
            fn_rate_g0,
            fn_rate_g1,
            fp_rate_g0,
            fp_rate_g1,
        })
    }

    /// EO level: the gap in false-negative rates.
    pub fn eo_level(&self) -> T {
        (self.fn_rate_g0 - self.fn_rate_g1).abs()
    }

    pub fn is_eo(&self) -> bool {
        self.eo_level() <= lit(Tolerances::default().identity)
    }
}

/// Pearson correlation between the two lenders' outputs, one per group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair<T> {
    pub rho_g0: T,
    pub rho_g1: T,
}

impl<T> CorrelationPair<T> {
    pub fn new(rho_g0: T, rho_g1: T) -> Self {
        Self { rho_g0, rho_g1 }
    }
}

/// Shares of one group's borrowers served by lender 1, lender 2 and both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow<T> {
    pub served_by_1: T,
    pub served_by_2: T,
    pub served_by_both: T,
}

impl<T: Scalar> OverlapRow<T> {
    pub fn new(served_by_1: T, served_by_2: T, served_by_both: T) -> Result<Self, FairnessError> {
        let row = Self {
            served_by_1,
            served_by_2,
            served_by_both,
        };
        row.validate()?;
        Ok(row)
    }

    /// Builds the row from the two lender shares; the shared part follows
    /// from every borrower being served by at least one lender.
    pub fn from_lender_shares(served_by_1: T, served_by_2: T) -> Result<Self, FairnessError> {
        Self::new(
            served_by_1,
            served_by_2,
            served_by_1 + served_by_2 - T::one(),
        )
    }

    /// Both lenders serve everyone.
    pub fn full() -> Self {
        Self {
            served_by_1: T::one(),
            served_by_2: T::one(),
            served_by_both: T::one(),
        }
    }

    pub fn validate(&self) -> Result<(), FairnessError> {
        for (name, v) in [
            ("served_by_1", self.served_by_1),
            ("served_by_2", self.served_by_2),
            ("served_by_both", self.served_by_both),
        ] {
            if !is_probability(v) {
                return Err(FairnessError::InvalidOverlap(format!(
                    "{name} = {} outside [0, 1]",
                    to_f64(v)
                )));
            }
        }
        let union = self.served_by_1 + self.served_by_2 - self.served_by_both;
        if (union - T::one()).abs() > lit(Tolerances::default().identity) {
            return Err(FairnessError::InvalidOverlap(format!(
                "served_by_1 + served_by_2 - served_by_both = {} (must be 1)",
                to_f64(union)
            )));
        }
        if self.served_by_both > min(self.served_by_1, self.served_by_2) {
            return Err(FairnessError::InvalidOverlap(
                "served_by_both exceeds a single lender's share".into(),
            ));
        }
        Ok(())
    }

    /// Probability that a borrower of this group gets no offer when lender
    /// `l` misses (or rejects) independently with probability `miss[l]`.
    pub fn no_offer_mass(&self, miss1: T, miss2: T) -> T {
        (T::one() - self.served_by_2) * miss1
            + (T::one() - self.served_by_1) * miss2
            + self.served_by_both * miss1 * miss2
    }
}

/// 0-1-k preferences: no offer is worth 0, one offer 1, several offers `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityKind<T> {
    k: T,
}

impl<T: Scalar> UtilityKind<T> {
    pub fn new(k: T) -> Result<Self, FairnessError> {
        if k < T::one() {
            return Err(FairnessError::InvalidUtility(to_f64(k)));
        }
        Ok(Self { k })
    }

    /// Borrowers only care about getting at least one offer (`k = 1`).
    pub fn at_least_one() -> Self {
        Self { k: T::one() }
    }

    pub fn k(&self) -> T {
        self.k
    }

    pub fn value(&self, offers: u32) -> T {
        match offers {
            0 => T::zero(),
            1 => T::one(),
            _ => self.k,
        }
    }
}

impl<T: Scalar> Default for UtilityKind<T> {
    fn default() -> Self {
        Self::at_least_one()
    }
}

/// Per-lender and ecosystem fairness levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessLevels<T> {
    pub eo_per_lender: Vec<T>,
    pub ed_per_lender: Vec<T>,
    pub dp_per_lender: Vec<T>,
    pub eoc: T,
    pub veoc: T,
    pub edc: T,
    pub dpc: T,
    /// Offer rate of deserving group-0 borrowers minus that of group 1.
    pub offer_gap: T,
    /// Welfare of deserving group-0 borrowers minus that of group 1.
    pub welfare_gap: T,
}

impl<T: Scalar> FairnessLevels<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> FairnessLevels<U> {
        FairnessLevels {
            eo_per_lender: self.eo_per_lender.iter().map(|&x| f(x)).collect(),
            ed_per_lender: self.ed_per_lender.iter().map(|&x| f(x)).collect(),
            dp_per_lender: self.dp_per_lender.iter().map(|&x| f(x)).collect(),
            eoc: f(self.eoc),
            veoc: f(self.veoc),
            edc: f(self.edc),
            dpc: f(self.dpc),
            offer_gap: f(self.offer_gap),
            welfare_gap: f(self.welfare_gap),
        }
    }

    pub fn to_f64(&self) -> FairnessLevels<f64> {
        self.map(to_f64)
    }
}

/// Closed interval of feasible Pearson coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoRange<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> RhoRange<T> {
    pub fn contains(&self, rho: T, slack: T) -> bool {
        rho >= self.lo - slack && rho <= self.hi + slack
    }
}

fn check_probability<T: Scalar>(name: &'static str, x: T) -> Result<(), FairnessError> {
    if is_probability(x) {
        Ok(())
    } else {
        Err(FairnessError::InvalidProbability {
            name,
            value: to_f64(x),
        })
    }
}

fn check_nondegenerate<T: Scalar>(name: &'static str, x: T) -> Result<(), FairnessError> {
    check_probability(name, x)?;
    if x == T::zero() || x == T::one() {
        return Err(FairnessError::DegenerateRate(to_f64(x)));
    }
    Ok(())
}

/// Standard deviation of a Bernoulli variable with success probability `p`.
pub fn bernoulli_sd<T: Real>(p: T) -> T {
    (p * (T::one() - p)).sqrt()
}

/// Product of the two Bernoulli standard deviations, computed under a single
/// root so that equal rates give `p(1-p)` exactly.
fn sd_product<T: Real>(p1: T, p2: T) -> T {
    (p1 * (T::one() - p1) * p2 * (T::one() - p2)).sqrt()
}

/// Feasible Pearson range for two Bernoulli miss indicators with miss
/// probabilities `beta1`, `beta2` (Fréchet–Hoeffding bounds on the joint
/// miss mass, normalised).
pub fn correlation_feasible_range<T: Real>(
    beta1: T,
    beta2: T,
) -> Result<RhoRange<T>, FairnessError> {
    check_nondegenerate("beta1", beta1)?;
    check_nondegenerate("beta2", beta2)?;
    let s = sd_product(beta1, beta2);
    let prod = beta1 * beta2;
    let lo = (max(T::zero(), beta1 + beta2 - T::one()) - prod) / s;
    let hi = (min(beta1, beta2) - prod) / s;
    Ok(RhoRange { lo, hi })
}

/// Checks that `rho` is feasible for the given rates (with `slack`).
pub fn check_correlation<T: Real>(
    beta1: T,
    beta2: T,
    rho: T,
    slack: T,
) -> Result<(), FairnessError> {
    let range = correlation_feasible_range(beta1, beta2)?;
    if range.contains(rho, slack) {
        Ok(())
    } else {
        Err(FairnessError::InfeasibleCorrelation {
            rho: to_f64(rho),
            lo: to_f64(range.lo),
            hi: to_f64(range.hi),
        })
    }
}

fn check_pair<T: Real>(beta1: T, beta2: T, corr: &CorrelationPair<T>) -> Result<(), FairnessError> {
    let slack = lit(Tolerances::default().feasibility);
    check_correlation(beta1, beta2, corr.rho_g0, slack)?;
    check_correlation(beta1, beta2, corr.rho_g1, slack)
}

/// Signed offer-rate gap (group 0 minus group 1) of two EO classifiers.
pub fn eoc_correlation_gap<T: Real>(
    beta1: T,
    beta2: T,
    corr: CorrelationPair<T>,
) -> Result<T, FairnessError> {
    check_pair(beta1, beta2, &corr)?;
    // d(a) = 1 - both-miss(a) and both-miss(a) = rho_a s1 s2 + b1 b2.
    Ok(sd_product(beta1, beta2) * (corr.rho_g1 - corr.rho_g0))
}

/// EOC level of two EO classifiers: `s1 s2 |rho0 - rho1|`.
pub fn eoc_correlation_level<T: Real>(
    beta1: T,
    beta2: T,
    corr: CorrelationPair<T>,
) -> Result<T, FairnessError> {
    Ok(eoc_correlation_gap(beta1, beta2, corr)?.abs())
}

/// Largest EOC level two EO classifiers with these rates can have.
pub fn eoc_correlation_worst_case<T: Scalar>(beta1: T, beta2: T) -> Result<T, FairnessError> {
    check_probability("beta1", beta1)?;
    check_probability("beta2", beta2)?;
    Ok(min(beta1, beta2) - max(T::zero(), beta1 + beta2 - T::one()))
}

/// Signed welfare gap (group 0 minus group 1) under 0-1-k preferences.
pub fn veoc_correlation_gap<T: Real>(
    util: UtilityKind<T>,
    beta1: T,
    beta2: T,
    corr: CorrelationPair<T>,
) -> Result<T, FairnessError> {
    check_pair(beta1, beta2, &corr)?;
    let two = T::one() + T::one();
    Ok(sd_product(beta1, beta2) * (util.k() - two) * (corr.rho_g0 - corr.rho_g1))
}

/// v-EOC level: `s1 s2 |(k - 2)(rho0 - rho1)|`.
pub fn veoc_correlation_level<T: Real>(
    util: UtilityKind<T>,
    beta1: T,
    beta2: T,
    corr: CorrelationPair<T>,
) -> Result<T, FairnessError> {
    Ok(veoc_correlation_gap(util, beta1, beta2, corr)?.abs())
}

pub fn veoc_worst_case<T: Scalar>(
    util: UtilityKind<T>,
    beta1: T,
    beta2: T,
) -> Result<T, FairnessError> {
    let two = T::one() + T::one();
    Ok((util.k() - two).abs() * eoc_correlation_worst_case(beta1, beta2)?)
}

/// Worst-case EOC level of `n` EO classifiers.
///
/// The all-miss mass ranges from `max{0, sum(beta) - (n - 1)}` (correct sets
/// laid out disjointly) to `min(beta)` (nested miss sets); for two lenders
/// the lower end is the familiar `max{0, b1 + b2 - 1}`.
pub fn eoc_worst_case_n<T: Scalar>(betas: &[T]) -> Result<T, FairnessError> {
    if betas.len() < 2 {
        return Err(FairnessError::TooFewClassifiers {
            min: 2,
            got: betas.len(),
        });
    }
    for &b in betas {
        check_probability("beta", b)?;
    }
    let lowest = betas.iter().copied().fold(T::one(), min);
    let sum = betas.iter().copied().fold(T::zero(), |acc, b| acc + b);
    let n_minus_1 = T::from_usize(betas.len() - 1).expect("small integer");
    Ok(lowest - max(T::zero(), sum - n_minus_1))
}

/// Signed EOC gap for two uncorrelated EO classifiers on overlapping pools.
pub fn eoc_overlap_gap<T: Scalar>(
    beta1: T,
    beta2: T,
    g0: &OverlapRow<T>,
    g1: &OverlapRow<T>,
) -> Result<T, FairnessError> {
    check_probability("beta1", beta1)?;
    check_probability("beta2", beta2)?;
    g0.validate()?;
    g1.validate()?;
    Ok((g0.served_by_2 - g1.served_by_2) * beta1
        + (g0.served_by_1 - g1.served_by_1) * beta2
        + (g1.served_by_both - g0.served_by_both) * beta1 * beta2)
}

/// EOC level of two uncorrelated EO classifiers serving overlapping pools.
pub fn eoc_overlap_level<T: Scalar>(
    beta1: T,
    beta2: T,
    g0: &OverlapRow<T>,
    g1: &OverlapRow<T>,
) -> Result<T, FairnessError> {
    Ok(eoc_overlap_gap(beta1, beta2, g0, g1)?.abs())
}

pub fn eoc_overlap_worst_case<T: Scalar>(beta1: T, beta2: T) -> Result<T, FairnessError> {
    check_probability("beta1", beta1)?;
    check_probability("beta2", beta2)?;
    Ok(max(beta1, beta2) - beta1 * beta2)
}

/// Feasible Pearson range between two approval indicators.
pub fn approval_feasible_range<T: Real>(eta1: T, eta2: T) -> Result<RhoRange<T>, FairnessError> {
    check_nondegenerate("eta1", eta1)?;
    check_nondegenerate("eta2", eta2)?;
    let s = sd_product(eta1, eta2);
    let prod = eta1 * eta2;
    Ok(RhoRange {
        lo: (max(T::zero(), eta1 + eta2 - T::one()) - prod) / s,
        hi: (min(eta1, eta2) - prod) / s,
    })
}

/// DPC level of two DP classifiers with approval probabilities `eta1`,
/// `eta2` and approval correlations `corr`.
pub fn dpc_correlation_level<T: Real>(
    eta1: T,
    eta2: T,
    corr: CorrelationPair<T>,
) -> Result<T, FairnessError> {
    let range = approval_feasible_range(eta1, eta2)?;
    let slack = lit(Tolerances::default().feasibility);
    for rho in [corr.rho_g0, corr.rho_g1] {
        if !range.contains(rho, slack) {
            return Err(FairnessError::InfeasibleCorrelation {
                rho: to_f64(rho),
                lo: to_f64(range.lo),
                hi: to_f64(range.hi),
            });
        }
    }
    // Both-reject mass is rho s1 s2 + (1 - eta1)(1 - eta2) in each group.
    Ok(sd_product(eta1, eta2) * (corr.rho_g0 - corr.rho_g1).abs())
}

pub fn dpc_correlation_worst_case<T: Scalar>(eta1: T, eta2: T) -> Result<T, FairnessError> {
    check_probability("eta1", eta1)?;
    check_probability("eta2", eta2)?;
    let one = T::one();
    Ok(min(one - eta1, one - eta2) - max(T::zero(), one - eta1 - eta2))
}

/// DPC level of two uncorrelated DP classifiers on overlapping pools.
pub fn dpc_overlap_level<T: Scalar>(
    eta1: T,
    eta2: T,
    g0: &OverlapRow<T>,
    g1: &OverlapRow<T>,
) -> Result<T, FairnessError> {
    check_probability("eta1", eta1)?;
    check_probability("eta2", eta2)?;
    g0.validate()?;
    g1.validate()?;
    let (r1, r2) = (T::one() - eta1, T::one() - eta2);
    Ok(((g0.served_by_2 - g1.served_by_2) * r1
        + (g0.served_by_1 - g1.served_by_1) * r2
        + (g1.served_by_both - g0.served_by_both) * r1 * r2)
        .abs())
}

pub fn dpc_overlap_worst_case<T: Scalar>(eta1: T, eta2: T) -> Result<T, FairnessError> {
    check_probability("eta1", eta1)?;
    check_probability("eta2", eta2)?;
    let (r1, r2) = (T::one() - eta1, T::one() - eta2);
    Ok(max(r1, r2) - r1 * r2)
}

/// Lower bound on the EDC level implied by the EOC level.
///
/// Panics if `levels` violates `edc >= eoc`, which holds for any levels
/// computed from a model or a table.
pub fn edc_lower_bound<T: Scalar>(levels: &FairnessLevels<T>) -> T {
    let slack: T = lit(Tolerances::default().identity);
    assert!(
        levels.edc + slack >= levels.eoc,
        "EDC level {:?} below EOC level {:?}",
        levels.edc,
        levels.eoc
    );
    levels.eoc
}
