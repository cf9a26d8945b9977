//! Brute-force oracles for the closed forms and the policy fit.
//!
//! Every check enumerates a discretized search space directly (joint pmfs
//! with fixed margins, serving profiles, derived policies) and compares the
//! extremes it finds with the closed-form bound, which must never be
//! exceeded and, where the grid contains the extremal construction, must be
//! met. Rates are chosen on grids that contain the extremal couplings so the
//! comparisons are exact up to rounding.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::fairness::{
    correlation_feasible_range, dpc_correlation_worst_case, dpc_overlap_worst_case,
    eoc_correlation_worst_case, eoc_overlap_worst_case, eoc_worst_case_n, veoc_worst_case,
    OverlapRow, UtilityKind,
};
use crate::group::Group;
use crate::joint::{
    extremal_pmf, overlap_model, overlap_pmf, pmf_fairness_levels, EcosystemModel, Overlap,
};
use crate::postprocess::{
    derived_tpr, expected_loss, fit_eo_policy_masses, lemma1_candidates, StratumMasses,
};
use num_traits::Signed;

use crate::scalar::Rational;

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// Parameter settings examined.
    pub cases: usize,
    /// Largest amount by which a computed value violated its bound or
    /// missed its target; at most the tolerance when the check passes.
    pub max_violation: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Frechet,
    WorstCase,
    Overlap,
    Dpc,
    Lp,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "frechet" => Self::Frechet,
            "worst-case" => Self::WorstCase,
            "overlap" => Self::Overlap,
            "dpc" => Self::Dpc,
            "lp" => Self::Lp,
            "all" => Self::All,
            other => {
                return Err(format!(
                    "unknown suite {other:?}; expected frechet, worst-case, overlap, dpc, lp or all"
                ))
            }
        })
    }
}

/// Runs the checks of `suite`; every comparison allows `tol`.
pub fn run_suite(suite: Suite, tol: f64) -> Vec<CheckReport> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Frechet {
        out.push(frechet_range(tol));
    }
    if all || suite == Suite::WorstCase {
        out.push(pair_worst_case(tol));
        out.push(pair_worst_case_attained(tol));
        out.push(welfare_worst_case(tol));
        out.push(n_lender_worst_case(tol));
        out.push(n_lender_worst_case_attained(tol));
    }
    if all || suite == Suite::Overlap {
        out.push(overlap_worst_case(tol));
        out.push(overlap_worst_case_attained(tol));
    }
    if all || suite == Suite::Dpc {
        out.push(dpc_worst_cases(tol));
    }
    if all || suite == Suite::Lp {
        out.push(lp_uniform_instance(tol));
        out.push(lp_grid_dominance(tol));
    }
    out
}

/// Tracks the largest violation across cases.
struct Tally {
    cases: usize,
    worst: f64,
    worst_at: String,
}

impl Tally {
    fn new() -> Self {
        Self {
            cases: 0,
            worst: 0.0,
            worst_at: String::new(),
        }
    }

    fn record(&mut self, violation: f64, at: impl FnOnce() -> String) {
        self.cases += 1;
        if violation > self.worst || violation.is_nan() {
            self.worst = violation;
            self.worst_at = at();
        }
    }

    fn report(self, suite: &'static str, name: &'static str, tol: f64, what: &str) -> CheckReport {
        let passed = self.worst <= tol;
        let detail = if passed {
            format!("{what}; largest violation {:.3e}", self.worst)
        } else {
            format!("{what}; violation {:.3e} at {}", self.worst, self.worst_at)
        };
        CheckReport {
            suite,
            name,
            passed,
            cases: self.cases,
            max_violation: self.worst,
            detail,
        }
    }
}

/// Rates `k / denom` for `k` in `lo..=hi`.
fn grid(denom: u32, lo: u32, hi: u32) -> impl Iterator<Item = (u32, f64)> + Clone {
    (lo..=hi).map(move |k| (k, f64::from(k) / f64::from(denom)))
}

/// Range of the both-miss mass over 2x2 pmfs with miss margins
/// `b1 / denom`, `b2 / denom`, searched on multiples of `1 / denom`.
fn both_miss_range(b1: u32, b2: u32, denom: u32) -> (u32, u32) {
    let feasible: Vec<u32> = (0..=denom)
        .filter(|&t| t <= b1 && t <= b2 && b1 + b2 <= denom + t)
        .collect();
    (
        feasible[0],
        *feasible.last().expect("independent-ish coupling exists"),
    )
}

const COUPLING_DENOM: u32 = 200;

fn frechet_range(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let d = COUPLING_DENOM;
    for (k1, b1) in grid(20, 1, 19) {
        for (k2, b2) in grid(20, 1, 19) {
            let (u1, u2) = (k1 * d / 20, k2 * d / 20);
            let s = (b1 * (1.0 - b1) * b2 * (1.0 - b2)).sqrt();
            let rho = |t: u32| (f64::from(t) / f64::from(d) - b1 * b2) / s;
            let (lo, hi) = (0..=d)
                .filter(|&t| t <= u1 && t <= u2 && u1 + u2 <= d + t)
                .map(rho)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r), hi.max(r))
                });
            let range = correlation_feasible_range(b1, b2).expect("interior rates");
            let v = (range.lo - lo).abs().max((range.hi - hi).abs());
            tally.record(v, || {
                format!(
                    "beta = ({b1}, {b2}): brute [{lo}, {hi}], formula [{}, {}]",
                    range.lo, range.hi
                )
            });
        }
    }
    tally.report(
        "frechet",
        "pearson-range",
        tol,
        "Pearson range of two miss indicators equals the brute-force extremes over couplings (step 1/200)",
    )
}

fn pair_worst_case(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let d = COUPLING_DENOM;
    for (k1, b1) in grid(20, 0, 20) {
        for (k2, b2) in grid(20, 0, 20) {
            let (lo, hi) = both_miss_range(k1 * d / 20, k2 * d / 20, d);
            // Each group picks its own coupling; the offer gap is the
            // difference of the two both-miss masses.
            let brute = f64::from(hi - lo) / f64::from(d);
            let bound = eoc_correlation_worst_case(b1, b2).expect("valid rates");
            tally.record((brute - bound).abs(), || {
                format!("beta = ({b1}, {b2}): brute {brute}, bound {bound}")
            });
        }
    }
    tally.report(
        "worst-case",
        "pair-bound",
        tol,
        "largest EOC level of two EO lenders over couplings (step 1/200) equals the closed-form bound",
    )
}

fn exact(x: f64) -> Rational {
    crate::scalar::lit(x)
}

fn half() -> Rational {
    Rational::new(1, 2)
}

/// Model whose deserving side is nested on group 0 and spread out on group 1.
fn extremal_model(betas: &[Rational]) -> EcosystemModel<Rational> {
    let nested = extremal_pmf(betas, Overlap::Max).expect("valid rates");
    let spread = extremal_pmf(betas, Overlap::Min).expect("valid rates");
    EcosystemModel::new(
        nested.clone(),
        spread.clone(),
        nested,
        spread,
        [half(), half()],
    )
    .expect("valid model")
}

fn pair_worst_case_attained(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    for (_, b1) in grid(20, 0, 20) {
        for (_, b2) in grid(20, 0, 20) {
            let (r1, r2) = (exact(b1), exact(b2));
            let levels =
                pmf_fairness_levels(&extremal_model(&[r1, r2]), UtilityKind::at_least_one());
            let bound = eoc_correlation_worst_case(r1, r2).expect("valid rates");
            let v = (levels.eoc - bound).abs();
            tally.record(crate::scalar::to_f64(v), || format!("beta = ({b1}, {b2})"));
            let worst_eo = levels
                .eo_per_lender
                .iter()
                .copied()
                .fold(Rational::new(0, 1), Rational::max);
            tally.record(crate::scalar::to_f64(worst_eo), || {
                format!("beta = ({b1}, {b2}): extremal lenders are not EO")
            });
        }
    }
    tally.report(
        "worst-case",
        "pair-attained",
        tol,
        "nested vs spread couplings of EO lenders reach the pair bound exactly",
    )
}

fn welfare_worst_case(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let d = COUPLING_DENOM;
    for k in [1.0, 1.5, 2.0, 3.0, 4.0] {
        let util = UtilityKind::new(k).expect("k >= 1");
        for (k1, b1) in grid(10, 0, 10) {
            for (k2, b2) in grid(10, 0, 10) {
                let (u1, u2) = (k1 * d / 10, k2 * d / 10);
                // Deserving welfare for a coupling with both-miss mass t.
                let welfare = |t: u32| {
                    let both = f64::from(t) / f64::from(d);
                    let none_offer = both;
                    let one_offer = b1 + b2 - 2.0 * both;
                    let two_offers = 1.0 - none_offer - one_offer;
                    one_offer + k * two_offers
                };
                let values: Vec<f64> = (0..=d)
                    .filter(|&t| t <= u1 && t <= u2 && u1 + u2 <= d + t)
                    .map(welfare)
                    .collect();
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let bound = veoc_worst_case(util, b1, b2).expect("valid rates");
                tally.record(((hi - lo) - bound).abs(), || {
                    format!("k = {k}, beta = ({b1}, {b2})")
                });
            }
        }
    }
    tally.report(
        "worst-case",
        "welfare-bound",
        tol,
        "largest v-EOC level over couplings (step 1/200) equals |k - 2| times the pair bound",
    )
}

/// Range of the all-miss mass over joint pmfs of three miss indicators
/// with margins `b[i] / denom`, searched on multiples of `1 / denom`.
fn triple_all_miss_range(b: [i64; 3], denom: i64) -> (i64, i64) {
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    // Free cells: exactly {1,2,3}, {1,2}, {1,3}, {2,3} missing.
    for t in 0..=denom {
        for p12 in 0..=denom - t {
            for p13 in 0..=denom - t - p12 {
                let q1 = b[0] - t - p12 - p13;
                if q1 < 0 {
                    break;
                }
                for p23 in 0..=denom - t - p12 - p13 {
                    let q2 = b[1] - t - p12 - p23;
                    let q3 = b[2] - t - p13 - p23;
                    if q2 < 0 || q3 < 0 {
                        break;
                    }
                    let none = denom - t - p12 - p13 - p23 - q1 - q2 - q3;
                    if none < 0 {
                        continue;
                    }
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
            }
        }
    }
    (lo, hi)
}

const TRIPLE_DENOM: i64 = 20;

fn n_lender_worst_case(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let levels = [2, 6, 10, 14, 18];
    for (i, &a) in levels.iter().enumerate() {
        for (j, &b) in levels.iter().enumerate().skip(i) {
            for &c in &levels[j..] {
                let (lo, hi) = triple_all_miss_range([a, b, c], TRIPLE_DENOM);
                let brute = (hi - lo) as f64 / TRIPLE_DENOM as f64;
                let betas = [a, b, c].map(|x| x as f64 / TRIPLE_DENOM as f64);
                let bound = eoc_worst_case_n(&betas).expect("valid rates");
                tally.record((brute - bound).abs(), || {
                    format!("betas = {betas:?}: brute {brute}, bound {bound}")
                });
            }
        }
    }
    tally.report(
        "worst-case",
        "three-lender-bound",
        tol,
        "largest EOC level of three EO lenders over couplings (step 1/20) equals min(beta) - max{0, sum(beta) - 2}",
    )
}

fn n_lender_worst_case_attained(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for n in 2..=5 {
        for _ in 0..40 {
            let betas: Vec<Rational> = (0..n)
                .map(|_| Rational::new(rng.random_range(0..=20), 20))
                .collect();
            let levels = pmf_fairness_levels(&extremal_model(&betas), UtilityKind::at_least_one());
            let bound = eoc_worst_case_n(&betas).expect("valid rates");
            tally.record(crate::scalar::to_f64((levels.eoc - bound).abs()), || {
                format!("betas = {betas:?}")
            });
        }
    }
    tally.report(
        "worst-case",
        "n-lender-attained",
        tol,
        "nested vs spread couplings of 2 to 5 EO lenders reach the n-lender bound exactly",
    )
}

const PROFILE_DENOM: u32 = 100;

/// Serving profiles on multiples of `1 / PROFILE_DENOM` where every
/// borrower is served by at least one lender.
fn profiles() -> impl Iterator<Item = OverlapRow<f64>> {
    let d = PROFILE_DENOM;
    (0..=d).flat_map(move |i| {
        (d - i..=d).map(move |j| {
            let (s1, s2) = (f64::from(i) / f64::from(d), f64::from(j) / f64::from(d));
            OverlapRow {
                served_by_1: s1,
                served_by_2: s2,
                served_by_both: f64::from(i + j - d) / f64::from(d),
            }
        })
    })
}

fn overlap_worst_case(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    for (_, b1) in grid(10, 0, 10) {
        for (_, b2) in grid(10, 0, 10) {
            let (lo, hi) = profiles()
                .map(|row| {
                    overlap_pmf(b1, b2, &row)
                        .expect("valid profile")
                        .any_offer()
                })
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                    (lo.min(d), hi.max(d))
                });
            let bound = eoc_overlap_worst_case(b1, b2).expect("valid rates");
            tally.record(((hi - lo) - bound).abs(), || {
                format!("beta = ({b1}, {b2}): brute {}, bound {bound}", hi - lo)
            });
        }
    }
    tally.report(
        "overlap",
        "overlap-bound",
        tol,
        "largest EOC level of two uncorrelated EO lenders over serving profiles (step 1/100) equals max(beta) - beta1 beta2",
    )
}

fn overlap_worst_case_attained(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let one = Rational::new(1, 1);
    let zero = Rational::new(0, 1);
    for (_, b1) in grid(20, 0, 20) {
        for (_, b2) in grid(20, 0, 20) {
            let (r1, r2) = (exact(b1), exact(b2));
            // Group 1 is served by both; group 0 only by the lender that
            // misses more often.
            let only_worse = if r1 >= r2 {
                OverlapRow::new(one, zero, zero)
            } else {
                OverlapRow::new(zero, one, zero)
            }
            .expect("valid profile");
            let model = overlap_model(
                [r1, r2],
                [zero, zero],
                [only_worse, OverlapRow::full()],
                [half(), half()],
            )
            .expect("valid model");
            let eoc = pmf_fairness_levels(&model, UtilityKind::at_least_one()).eoc;
            let bound = eoc_overlap_worst_case(r1, r2).expect("valid rates");
            tally.record(crate::scalar::to_f64((eoc - bound).abs()), || {
                format!("beta = ({b1}, {b2})")
            });
        }
    }
    tally.report(
        "overlap",
        "overlap-attained",
        tol,
        "full service on one group and single-lender service on the other reach the overlap bound exactly",
    )
}

fn dpc_worst_cases(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let d = COUPLING_DENOM;
    for (k1, e1) in grid(10, 0, 10) {
        for (k2, e2) in grid(10, 0, 10) {
            // Couplings of the two reject indicators.
            let (r1, r2) = ((10 - k1) * d / 10, (10 - k2) * d / 10);
            let (lo, hi) = both_miss_range(r1, r2, d);
            let brute = f64::from(hi - lo) / f64::from(d);
            let bound = dpc_correlation_worst_case(e1, e2).expect("valid rates");
            tally.record((brute - bound).abs(), || {
                format!("eta = ({e1}, {e2}): coupling brute {brute}, bound {bound}")
            });

            let (plo, phi) = profiles()
                .map(|row| {
                    overlap_pmf(1.0 - e1, 1.0 - e2, &row)
                        .expect("valid profile")
                        .any_offer()
                })
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                });
            let bound = dpc_overlap_worst_case(e1, e2).expect("valid rates");
            tally.record(((phi - plo) - bound).abs(), || {
                format!(
                    "eta = ({e1}, {e2}): profile brute {}, bound {bound}",
                    phi - plo
                )
            });
        }
    }
    for (eta, expected) in [(0.7f64, 0.3f64), (0.3, 0.3)] {
        let got = dpc_correlation_worst_case(eta, eta).expect("valid rates");
        tally.record((got - expected).abs(), || {
            format!("eta = {eta}: worst case {got}, expected {expected}")
        });
    }
    tally.report(
        "dpc",
        "dpc-bounds",
        tol,
        "largest DPC levels over approval couplings (step 1/200) and serving profiles (step 1/100) equal the closed forms",
    )
}

fn lp_uniform_instance(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let r = |n, d| Rational::new(n, d);
    let [c1, c2] = lemma1_candidates(r(1, 5), r(1, 10), r(1, 10), r(1, 10)).expect("valid rates");
    let costs = [
        crate::scalar::to_f64(c1.cost),
        crate::scalar::to_f64(c2.cost),
    ];
    tally.record((costs[0] - 0.1375).abs(), || {
        format!("first candidate cost {}", costs[0])
    });
    tally.record((costs[1] - 0.025).abs(), || {
        format!("second candidate cost {}", costs[1])
    });
    let masses = StratumMasses::uniform(r(1, 5), r(1, 10), r(1, 10), r(1, 10));
    let fit = fit_eo_policy_masses(&masses, 0, r(0, 1)).expect("fittable");
    let cheaper = if c1.cost <= c2.cost { &c1 } else { &c2 };
    tally.record(
        if fit.policy == cheaper.policy {
            0.0
        } else {
            1.0
        },
        || {
            format!(
                "fit chose {:?}, cheaper candidate is {:?}",
                fit.policy, cheaper.policy
            )
        },
    );
    tally.report(
        "lp",
        "uniform-instance",
        tol,
        "candidate costs 0.1375 and 0.025 and the fit selects the cheaper one",
    )
}

/// Number of random instances for the grid oracle.
pub const LP_INSTANCES: usize = 50;
const POLICY_DENOM: i64 = 1000;
const RATE_DENOM: i64 = 20;
const TPR_GAP_LIMIT: f64 = 1e-9;

/// Random fitting distribution whose within-group label and prediction
/// rates are multiples of `1 / RATE_DENOM`.
fn random_masses(rng: &mut ChaCha8Rng) -> (StratumMasses<f64>, [i64; 2]) {
    let mut mass = [[[0.0; 2]; 2]; 2];
    let share = f64::from(rng.random_range(4..=16)) / 20.0;
    let mut beta_units = [0; 2];
    for g in 0..2 {
        let w = if g == 0 { share } else { 1.0 - share };
        let pi = f64::from(rng.random_range(2..=18)) / 20.0;
        let b = rng.random_range(1..RATE_DENOM);
        let a = f64::from(rng.random_range(1..20)) / 20.0;
        beta_units[g] = b;
        let beta = b as f64 / RATE_DENOM as f64;
        mass[g][1] = [w * pi * beta, w * pi * (1.0 - beta)];
        mass[g][0] = [w * (1.0 - pi) * (1.0 - a), w * (1.0 - pi) * a];
    }
    (StratumMasses { mass }, beta_units)
}

/// Least loss per true-positive rate (in units of
/// `1 / (POLICY_DENOM * RATE_DENOM)`) over one group's policy grid.
fn group_frontier(masses: &StratumMasses<f64>, g: usize, beta: i64) -> HashMap<i64, f64> {
    let m = &masses.mass[g];
    let mut best: HashMap<i64, f64> = HashMap::new();
    for j0 in 0..=POLICY_DENOM {
        let p0 = j0 as f64 / POLICY_DENOM as f64;
        for j1 in 0..=POLICY_DENOM {
            let p1 = j1 as f64 / POLICY_DENOM as f64;
            let tpr = j0 * beta + j1 * (RATE_DENOM - beta);
            let loss = m[0][0] * p0 + m[0][1] * p1 + m[1][0] * (1.0 - p0) + m[1][1] * (1.0 - p1);
            best.entry(tpr)
                .and_modify(|l| *l = l.min(loss))
                .or_insert(loss);
        }
    }
    best
}

fn lp_grid_dominance(tol: f64) -> CheckReport {
    let mut tally = Tally::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x01e3);
    for instance in 0..LP_INSTANCES {
        let (masses, beta) = random_masses(&mut rng);
        let fit = fit_eo_policy_masses(&masses, 0, 1e-12).expect("fittable");
        let f0 = group_frontier(&masses, 0, beta[0]);
        let f1 = group_frontier(&masses, 1, beta[1]);
        let grid_best = f0
            .iter()
            .filter_map(|(t, l0)| f1.get(t).map(|l1| l0 + l1))
            .fold(f64::INFINITY, f64::min);
        let loss = expected_loss(&fit.policy, &masses);
        tally.record(loss - grid_best, || {
            format!("instance {instance}: fit loss {loss}, grid best {grid_best}")
        });
        let gap = (derived_tpr(&fit.policy, &masses, Group::Zero)
            - derived_tpr(&fit.policy, &masses, Group::One))
        .abs();
        tally.record((gap - TPR_GAP_LIMIT).max(0.0), || {
            format!("instance {instance}: TPR gap {gap}")
        });
    }
    tally.report(
        "lp",
        "grid-dominance",
        tol,
        "vertex fit loss never exceeds the best exactly feasible policy on a 1e-3 grid, and its TPR gap is at most 1e-9",
    )
}
