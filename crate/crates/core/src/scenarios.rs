//! Named ecosystems with known fairness levels, exact in any [`Scalar`].

use crate::group::Group;
use crate::joint::{
    extremal_pmf, independent_pmf, monoculture_pmf, pair_pmf_from_both_miss, EcosystemModel,
    JointPmf, ModelError, Overlap,
};
use crate::postprocess::{
    apply_policy_to_model, lemma1_candidates, DerivedPolicy, PostprocessError,
};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; expected example1, example3, example4 or monoculture")]
    Unknown(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Before,
    After,
}

/// An ecosystem together with the per-lender post-processing it undergoes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub before: EcosystemModel<T>,
    /// `(lender, policy)` pairs applied in order.
    pub adjustments: Vec<(usize, DerivedPolicy<T>)>,
}

impl<T: Scalar> Scenario<T> {
    pub fn after(&self) -> EcosystemModel<T> {
        self.adjustments
            .iter()
            .fold(self.before.clone(), |m, (l, p)| {
                apply_policy_to_model(p, &m, *l)
            })
    }

    pub fn model(&self, phase: Phase) -> EcosystemModel<T> {
        match phase {
            Phase::Before => self.before.clone(),
            Phase::After => self.after(),
        }
    }
}

/// False-positive rate of every lender in [`monoculture`] and [`example1`].
const MONOCULTURE_ALPHA: f64 = 0.1;

/// `n` lenders with miss rate `beta`: one shared classifier on group 0,
/// independent classifiers on group 1. Already EO, so no adjustment.
pub fn monoculture<T: Scalar>(beta: T, n: usize) -> Result<Scenario<T>, ScenarioError> {
    let (pos_g0, pos_g1) = monoculture_pmf(beta, n)?;
    let alpha: T = lit(MONOCULTURE_ALPHA);
    let reject = T::one() - alpha;
    let neg_g0 = extremal_pmf(&vec![reject; n], Overlap::Max)?;
    let neg_g1 = independent_pmf(&vec![alpha; n])?;
    let half = lit(0.5);
    Ok(Scenario {
        name: "monoculture".into(),
        before: EcosystemModel::new(pos_g0, pos_g1, neg_g0, neg_g1, [half, half])?,
        adjustments: Vec::new(),
    })
}

/// Two lenders sharing a third-party classifier on group 0, with miss
/// rate 0.1 everywhere: EOC level `0.1 · 0.9 = 0.09`.
pub fn example1<T: Scalar>() -> Result<Scenario<T>, ScenarioError> {
    let mut s = monoculture(lit(0.1), 2)?;
    s.name = "example1".into();
    Ok(s)
}

/// Miss rates 0.1 on group 0 (fully correlated) and 0.2 on group 1
/// (correlation 0.375, both-miss mass 0.1). The groups' both-miss masses
/// agree, so the ecosystem is EOC although neither lender is EO.
/// False-positive rates 0.1 on group 0 and 0.7 on group 1 make raising
/// group 1's negative predictions the cheapest EO repair, which drops
/// group 1's both-miss mass to 0.025.
pub fn example3<T: Scalar>() -> Result<Scenario<T>, ScenarioError> {
    let (b0, b1, a0, a1) = (lit::<T>(0.1), lit::<T>(0.2), lit::<T>(0.1), lit::<T>(0.7));
    let pos_g0 = extremal_pmf(&[b0, b0], Overlap::Max)?;
    let pos_g1 = pair_pmf_from_both_miss(b1, b1, lit(0.1))?;
    let neg_g0 = independent_pmf(&[a0, a0])?;
    let neg_g1 = independent_pmf(&[a1, a1])?;
    let half = lit(0.5);
    let before = EcosystemModel::new(pos_g0, pos_g1, neg_g0, neg_g1, [half, half])?;
    let [raise, _] = lemma1_candidates(b0, b1, a0, a1)?;
    Ok(Scenario {
        name: "example3".into(),
        before,
        adjustments: vec![(0, raise.policy), (1, raise.policy)],
    })
}

/// Lender 1 serves everyone and misses a fraction `beta` of deserving
/// group-1 borrowers; lender 2 serves group 1 only and is perfect. Every
/// deserving borrower gets an offer until lender 1 is made EO by
/// withdrawing offers on group 0, which leaves deserving group-0
/// borrowers unserved with probability `beta`.
pub fn example4<T: Scalar>(beta: T) -> Result<Scenario<T>, ScenarioError> {
    let zero = T::zero();
    let one = T::one();
    // Output index bits: lender 1 is the high bit.
    let (none, only1) = (0b00, 0b10);
    let pos_g0 = JointPmf::point(2, only1)?;
    let pos_g1 = JointPmf::from_cells(2, vec![zero, beta, zero, one - beta])?;
    let neg_g0 = JointPmf::point(2, none)?;
    let neg_g1 = JointPmf::point(2, none)?;
    let half = lit(0.5);
    let before = EcosystemModel::new(pos_g0, pos_g1, neg_g0, neg_g1, [half, half])?;
    let [_, lower] = lemma1_candidates(zero, beta, zero, zero)?;
    Ok(Scenario {
        name: "example4".into(),
        before,
        adjustments: vec![(0, lower.policy)],
    })
}

/// Serving pattern of [`example4`]: lender 2 serves only group 1.
pub fn example4_serves(lender: usize, group: Group) -> bool {
    lender == 0 || group == Group::One
}

/// Resolves a scenario by name. `beta` defaults to 0.25 for example4 and
/// 0.2 for monoculture; `n` defaults to 2.
pub fn by_name<T: Scalar>(
    name: &str,
    beta: Option<T>,
    n: Option<usize>,
) -> Result<Scenario<T>, ScenarioError> {
    match name {
        "example1" => example1(),
        "example3" => example3(),
        "example4" => example4(beta.unwrap_or_else(|| lit(0.25))),
        "monoculture" => monoculture(beta.unwrap_or_else(|| lit(0.2)), n.unwrap_or(2)),
        other => Err(ScenarioError::Unknown(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::UtilityKind;
    use crate::joint::pmf_fairness_levels;
    use crate::postprocess::{fit_eo_policy_masses, StratumMasses};
    use crate::scalar::Rational;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    fn levels(m: &EcosystemModel<Rational>) -> crate::fairness::FairnessLevels<Rational> {
        pmf_fairness_levels(m, UtilityKind::at_least_one())
    }

    #[test]
    fn example3_levels() {
        let s = example3::<Rational>().unwrap();
        let before = levels(&s.before);
        assert_eq!(before.eoc, r(0, 1));
        assert_eq!(s.before.pmf(Group::Zero, true).no_offer(), r(1, 10));
        assert_eq!(s.before.pmf(Group::One, true).no_offer(), r(1, 10));
        assert_eq!(before.eo_per_lender, vec![r(1, 10), r(1, 10)]);
        let after = levels(&s.after());
        assert_eq!(after.eoc, r(3, 40));
        assert_eq!(after.eo_per_lender, vec![r(0, 1), r(0, 1)]);
    }

    #[test]
    fn example3_adjustment_is_the_optimal_derived_policy() {
        let s = example3::<Rational>().unwrap();
        for (l, policy) in &s.adjustments {
            let fit = fit_eo_policy_masses(&StratumMasses::from_model(&s.before, *l), *l, r(0, 1))
                .unwrap();
            assert_eq!(&fit.policy, policy);
        }
    }

    #[test]
    fn example4_levels() {
        let s = example4(r(1, 4)).unwrap();
        assert_eq!(levels(&s.before).eoc, r(0, 1));
        let after = levels(&s.after());
        assert_eq!(after.eoc, r(1, 4));
        assert_eq!(after.eo_per_lender[0], r(0, 1));
        let fit =
            fit_eo_policy_masses(&StratumMasses::from_model(&s.before, 0), 0, r(0, 1)).unwrap();
        assert_eq!(fit.policy, s.adjustments[0].1);
    }

    #[test]
    fn monoculture_level_is_beta_minus_beta_to_the_n() {
        for n in 2..=6 {
            let s = monoculture(r(1, 5), n).unwrap();
            let b = r(1, 5);
            let expected = b - (0..n).fold(r(1, 1), |acc, _| acc * b);
            assert_eq!(levels(&s.before).eoc, expected);
        }
        assert_eq!(
            levels(&example1::<Rational>().unwrap().before).eoc,
            r(9, 100)
        );
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert_eq!(
            by_name::<f64>("example2", None, None),
            Err(ScenarioError::Unknown("example2".into()))
        );
    }
}
