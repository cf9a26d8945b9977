use nalgebra::{DMatrix, DVector};

use super::{Dataset, LearnerConfig, LearnerError, ModelParams};

/// Penalized loss after initialization and after every accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTrace {
    pub losses: Vec<f64>,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 40;
const MAX_RIDGE: f64 = 1e2;
const MIN_SCALE: f64 = 1e-12;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Standardized design with a trailing intercept column.
struct Design {
    x: DMatrix<f64>,
    y: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

fn design(ds: &Dataset, with_group: bool) -> Design {
    let n = ds.len();
    let mut raw = Vec::with_capacity(ds.n_features() + 1);
    ds.input_row(0, with_group, &mut raw);
    let d = raw.len();
    let mut x = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        ds.input_row(i, with_group, &mut raw);
        for (j, &v) in raw.iter().enumerate() {
            x[(i, j)] = v;
        }
        x[(i, d)] = 1.0;
    }
    let mut means = vec![0.0; d];
    let mut scales = vec![1.0; d];
    for j in 0..d {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        means[j] = mean;
        scales[j] = if sd > MIN_SCALE { sd } else { 1.0 };
        for i in 0..n {
            x[(i, j)] = (x[(i, j)] - mean) / scales[j];
        }
    }
    let y = ds
        .labels()
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    Design {
        x,
        y,
        means,
        scales,
    }
}

fn penalized_loss(d: &Design, theta: &DVector<f64>, ridge: f64) -> f64 {
    let z = &d.x * theta;
    let nll: f64 = z.iter().zip(&d.y).map(|(&z, &y)| softplus(z) - y * z).sum();
    let k = theta.len() - 1;
    nll + 0.5 * ridge * theta.rows(0, k).norm_squared()
}

/// Damped Newton on the ridge-penalized negative log-likelihood. Steps are
/// halved until the loss does not increase, so the trace is non-increasing.
pub(crate) fn fit(
    ds: &Dataset,
    cfg: &LearnerConfig,
) -> Result<(ModelParams, LogisticTrace), LearnerError> {
    if !ds.labels().iter().any(|&y| y) || ds.labels().iter().all(|&y| y) {
        return Err(LearnerError::SingleClass);
    }
    let d = design(ds, cfg.use_protected_feature);
    let k = d.x.ncols();
    let mut theta = DVector::zeros(k);
    let mut loss = penalized_loss(&d, &theta, cfg.ridge);
    let mut losses = vec![loss];
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let z = &d.x * &theta;
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..d.x.nrows() {
            let p = sigmoid(z[i]);
            let row = d.x.row(i);
            let r = p - d.y[i];
            let w = p * (1.0 - p);
            for a in 0..k {
                grad[a] += r * row[a];
                let wa = w * row[a];
                for b in 0..=a {
                    hess[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        for a in 0..k - 1 {
            grad[a] += cfg.ridge * theta[a];
            hess[(a, a)] += cfg.ridge;
        }

        let step = solve_with_rescue(hess, &grad, cfg.ridge)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &theta - &step * t;
            let l = penalized_loss(&d, &candidate, cfg.ridge);
            if l <= loss {
                accepted = Some((candidate, l));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            converged = true;
            break;
        };
        let moved = (&next - &theta).amax();
        theta = next;
        loss = next_loss;
        losses.push(loss);
        if moved < cfg.tol {
            converged = true;
            break;
        }
    }

    let coefficients = theta.rows(0, k - 1).iter().copied().collect();
    Ok((
        ModelParams::Logistic {
            means: d.means,
            scales: d.scales,
            coefficients,
            intercept: theta[k - 1],
        },
        LogisticTrace { losses, converged },
    ))
}

/// Solves `H s = g`, adding growing multiples of the identity while the
/// Cholesky factorization fails.
fn solve_with_rescue(
    hess: DMatrix<f64>,
    grad: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>, LearnerError> {
    let mut extra = 0.0;
    loop {
        let mut h = hess.clone();
        for a in 0..h.nrows() {
            h[(a, a)] += extra;
        }
        if let Some(chol) = h.cholesky() {
            let s = chol.solve(grad);
            if s.iter().all(|v| v.is_finite()) {
                return Ok(s);
            }
        }
        extra = if extra == 0.0 {
            ridge.max(1e-10)
        } else {
            extra * 10.0
        };
        if extra > MAX_RIDGE {
            return Err(LearnerError::SingularFit { ridge: extra });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Group;
    use crate::learners::train_logistic_traced;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_is_stable_in_both_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_a_known_logit() {
        // Group-balanced cells with exact frequencies sigmoid(±1).
        let p = sigmoid(1.0);
        let mut f = Vec::new();
        let mut y = Vec::new();
        let n = 1000;
        let pos = (p * n as f64).round() as usize;
        for x in [-1.0, 1.0] {
            for i in 0..n {
                f.push(x);
                let share = if x > 0.0 { pos } else { n - pos };
                y.push(i < share);
            }
        }
        let g = vec![Group::Zero; f.len()];
        let ds = Dataset::new(f, g, y, vec!["x".into()]).unwrap();
        let cfg = LearnerConfig {
            use_protected_feature: false,
            ..LearnerConfig::logistic()
        };
        let (model, trace) = train_logistic_traced(&ds, &cfg).unwrap();
        assert!(trace.converged);
        let ModelParams::Logistic {
            coefficients,
            intercept,
            scales,
            ..
        } = model.params
        else {
            unreachable!()
        };
        let slope = coefficients[0] / scales[0];
        assert!((slope - 1.0).abs() < 2e-3, "slope {slope}");
        assert!(intercept.abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn penalized_loss_never_increases(seed in 0u64..200, n in 20usize..80) {
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let mut f = Vec::new();
            let mut g = Vec::new();
            let mut y = Vec::new();
            for i in 0..n {
                let (a, b) = (next(), next());
                f.extend_from_slice(&[a, b]);
                g.push(if next() < 0.5 { Group::Zero } else { Group::One });
                y.push(if i < 2 { i == 0 } else { next() < a });
            }
            let ds = Dataset::new(f, g, y, vec!["a".into(), "b".into()]).unwrap();
            let (_, trace) = train_logistic_traced(&ds, &LearnerConfig::logistic()).unwrap();
            for w in trace.losses.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
