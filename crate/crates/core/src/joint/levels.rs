use crate::fairness::{FairnessLevels, UtilityKind};
use crate::group::Group;
use crate::scalar::{max, Scalar};

use super::{EcosystemModel, JointPmf};

fn welfare<T: Scalar>(pmf: &JointPmf<T>, util: &UtilityKind<T>) -> T {
    pmf.iter().fold(T::zero(), |acc, (o, p)| {
        acc + p * util.value(o.count_ones())
    })
}

/// Every fairness level of `model`, by exact enumeration of its cells.
pub fn pmf_fairness_levels<T: Scalar>(
    model: &EcosystemModel<T>,
    util: UtilityKind<T>,
) -> FairnessLevels<T> {
    let n = model.n();
    let one = T::one();
    let offer = |g: Group, y: bool| model.pmf(g, y).any_offer();
    let mix = |g: Group, pos: T, neg: T| {
        let pi = model.base_rate(g);
        pi * pos + (one - pi) * neg
    };

    let offer_gap = offer(Group::Zero, true) - offer(Group::One, true);
    let neg_gap = offer(Group::Zero, false) - offer(Group::One, false);
    let welfare_gap =
        welfare(model.pmf(Group::Zero, true), &util) - welfare(model.pmf(Group::One, true), &util);
    let dpc = mix(
        Group::Zero,
        offer(Group::Zero, true),
        offer(Group::Zero, false),
    ) - mix(
        Group::One,
        offer(Group::One, true),
        offer(Group::One, false),
    );

    let mut eo = Vec::with_capacity(n);
    let mut ed = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for l in 0..n {
        let rate = |g: Group, y: bool| model.pmf(g, y).offer_rate(l);
        let tpr_gap = (rate(Group::Zero, true) - rate(Group::One, true)).abs();
        let fpr_gap = (rate(Group::Zero, false) - rate(Group::One, false)).abs();
        eo.push(tpr_gap);
        ed.push(max(tpr_gap, fpr_gap));
        dp.push(
            (mix(
                Group::Zero,
                rate(Group::Zero, true),
                rate(Group::Zero, false),
            ) - mix(Group::One, rate(Group::One, true), rate(Group::One, false)))
            .abs(),
        );
    }

    FairnessLevels {
        eo_per_lender: eo,
        ed_per_lender: ed,
        dp_per_lender: dp,
        eoc: offer_gap.abs(),
        veoc: welfare_gap.abs(),
        edc: max(offer_gap.abs(), neg_gap.abs()),
        dpc: dpc.abs(),
        offer_gap,
        welfare_gap,
    }
}
