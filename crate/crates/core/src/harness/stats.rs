use serde::{Deserialize, Serialize};

use super::{HarnessError, ReplicateOutcome, RATIO_FLOOR};

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Normal,
    Wilson,
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub method: IntervalMethod,
}

/// Fraction of successful replicates whose EOC level rose after adjustment.
pub fn harm_likelihood(
    results: &[ReplicateOutcome],
    method: IntervalMethod,
) -> Result<IntervalEstimate, HarnessError> {
    let ok: Vec<_> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let n = ok.len();
    if n == 0 {
        return Err(HarnessError::NoReplicates);
    }
    let harmed = ok.iter().filter(|r| r.harmed).count();
    let p = harmed as f64 / n as f64;
    let nf = n as f64;
    let (lo, hi) = match method {
        IntervalMethod::Normal => {
            let half = Z95 * (p * (1.0 - p) / nf).sqrt();
            ((p - half).max(0.0), (p + half).min(1.0))
        }
        IntervalMethod::Wilson => {
            let z2 = Z95 * Z95;
            let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
            let half = Z95 / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
            ((centre - half).max(0.0), (centre + half).min(1.0))
        }
    };
    Ok(IntervalEstimate {
        point: p,
        lo: lo.min(p),
        hi: hi.max(p),
        n,
        method,
    })
}

/// Mean factor by which EOC grew over harmed replicates with a positive
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub interval: IntervalEstimate,
    /// Successful replicates whose baseline EOC was at most the ratio floor.
    pub excluded_count: usize,
}

/// Zero-baseline replicates among the successful ones.
pub fn zero_baseline_count(results: &[ReplicateOutcome]) -> usize {
    results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|r| r.eoc_before <= RATIO_FLOOR)
        .count()
}

pub fn effect_size(results: &[ReplicateOutcome]) -> Result<EffectSize, HarnessError> {
    let ratios: Vec<f64> = results
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|r| r.harmed)
        .filter_map(|r| r.ratio)
        .collect();
    let m = ratios.len();
    if m < 2 {
        return Err(HarnessError::InsufficientRatios(m));
    }
    let mf = m as f64;
    let mean = ratios.iter().sum::<f64>() / mf;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (mf - 1.0);
    let half = Z95 * (var / mf).sqrt();
    Ok(EffectSize {
        interval: IntervalEstimate {
            point: mean,
            lo: mean - half,
            hi: mean + half,
            n: m,
            method: IntervalMethod::Normal,
        },
        excluded_count: zero_baseline_count(results),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ReplicateFailure, ReplicateResult};

    fn outcome(before: f64, after: f64) -> ReplicateOutcome {
        Ok(ReplicateResult::new(
            0,
            0,
            before,
            after,
            vec![],
            vec![],
            vec![],
            vec![],
        ))
    }

    #[test]
    fn all_and_none_harmed() {
        let all: Vec<_> = (0..10).map(|_| outcome(0.1, 0.2)).collect();
        let h = harm_likelihood(&all, IntervalMethod::Normal).unwrap();
        assert_eq!((h.point, h.hi), (1.0, 1.0));
        let none: Vec<_> = (0..10).map(|_| outcome(0.2, 0.1)).collect();
        let h = harm_likelihood(&none, IntervalMethod::Normal).unwrap();
        assert_eq!((h.point, h.lo), (0.0, 0.0));
    }

    #[test]
    fn normal_interval_for_380_of_500() {
        let mut rs: Vec<_> = (0..380).map(|_| outcome(0.1, 0.2)).collect();
        rs.extend((0..120).map(|_| outcome(0.2, 0.1)));
        let h = harm_likelihood(&rs, IntervalMethod::Normal).unwrap();
        assert!((h.point - 0.76).abs() < 1e-15);
        assert!((h.lo - 0.7226).abs() < 1e-4 && (h.hi - 0.7974).abs() < 1e-4);
        let w = harm_likelihood(&rs, IntervalMethod::Wilson).unwrap();
        assert!(w.lo > 0.70 && w.hi < 0.80 && w.lo <= w.point && w.point <= w.hi);
    }

    #[test]
    fn failures_are_not_counted() {
        let rs = vec![
            outcome(0.1, 0.2),
            Err(ReplicateFailure {
                replicate: 1,
                message: "x".into(),
            }),
        ];
        assert_eq!(harm_likelihood(&rs, IntervalMethod::Normal).unwrap().n, 1);
        let only_failed = vec![rs[1].clone()];
        assert_eq!(
            harm_likelihood(&only_failed, IntervalMethod::Normal),
            Err(HarnessError::NoReplicates)
        );
    }

    #[test]
    fn effect_size_mean_and_exclusions() {
        let rs = vec![
            outcome(0.1, 0.2),
            outcome(0.1, 0.4),
            outcome(0.0, 0.3),
            outcome(0.3, 0.1),
        ];
        let e = effect_size(&rs).unwrap();
        assert!((e.interval.point - 3.0).abs() < 1e-12);
        assert_eq!(e.excluded_count, 1);
        let unharmed = vec![outcome(0.3, 0.1), outcome(0.3, 0.2)];
        assert_eq!(
            effect_size(&unharmed),
            Err(HarnessError::InsufficientRatios(0))
        );
    }
}
