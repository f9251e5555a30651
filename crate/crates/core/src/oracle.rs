//! Independent verification tools: central finite differences, a
//! first-order invariance probe, a grid-search projection and the tabular
//! value-iteration oracles. None of this is used on a training path.

use crate::autodiff::{norm, ParamVector};
use crate::error::{Error, Result};

pub use crate::envs::{policy_evaluation, value_iteration};
use crate::ppo::Boundary;

/// Default finite-difference step for 64-bit floats.
pub const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    pub argmax: usize,
    pub eps: f64,
}

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central differences `(L(theta + eps e_i) - L(theta - eps e_i)) / 2 eps`
/// for every coordinate.
pub fn finite_diff<F>(mut loss_fn: F, theta: &ParamVector, eps: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let x = theta.values()[i];
        probe.values_mut()[i] = x + eps;
        let up = loss_fn(&probe)?;
        probe.values_mut()[i] = x - eps;
        let down = loss_fn(&probe)?;
        probe.values_mut()[i] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff" });
        }
        grad.push((up - down) / (2.0 * eps));
    }
    theta.with_values(grad)
}

/// Elementwise comparison of an analytic gradient with a numeric one.
pub fn compare(analytic: &[f64], numeric: &[f64], eps: f64) -> Result<FiniteDiffReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::LengthMismatch {
            what: "gradient comparison",
            expected: analytic.len(),
            got: numeric.len(),
        });
    }
    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        argmax: 0,
        eps,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_error(*a, *n);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.argmax = i;
        }
    }
    Ok(report)
}

/// `|L(theta - eta u) - L(theta)|` for each `eta`; `u` must be a unit vector.
pub fn first_order_invariance_probe<F>(mut loss_fn: F, theta: &ParamVector, u: &[f64], etas: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if u.len() != theta.len() {
        return Err(Error::LengthMismatch {
            what: "probe direction",
            expected: theta.len(),
            got: u.len(),
        });
    }
    if (norm(u) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("probe direction must have unit norm".into()));
    }
    let base = loss_fn(theta)?;
    etas.iter()
        .map(|&eta| {
            let moved: Vec<f64> = theta.values().iter().zip(u).map(|(t, d)| t - eta * d).collect();
            let l = loss_fn(&theta.with_values(moved)?)?;
            if !l.is_finite() || !base.is_finite() {
                return Err(Error::NonFinite { op: "invariance probe" });
            }
            Ok((l - base).abs())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceProjection {
    pub v: Vec<f64>,
    /// Spacing of the finest grid searched.
    pub pitch: f64,
}

/// Orthonormal basis of the hyperplane `{v : r . v = 0}`, built from the
/// coordinate axes by Gram-Schmidt.
fn hyperplane_basis(r: &[f64]) -> Vec<Vec<f64>> {
    let nr = norm(r);
    let unit: Vec<f64> = r.iter().map(|x| x / nr).collect();
    let mut basis: Vec<Vec<f64>> = vec![unit];
    for axis in 0..r.len() {
        let mut e = vec![0.0; r.len()];
        e[axis] = 1.0;
        for b in &basis {
            let c: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
            e.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = norm(&e);
        if n > 1e-6 {
            basis.push(e.into_iter().map(|x| x / n).collect());
        }
        if basis.len() == r.len() {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// Minimises `|g_E - v|` over the hyperplane orthogonal to `g_R` by dense
/// grid search over in-plane coordinates, refined coarse to fine. Only 2-D
/// and 3-D inputs are supported.
pub fn projection_bruteforce(g_e: &[f64], g_r: &[f64], resolution: usize) -> Result<BruteForceProjection> {
    let d = g_e.len();
    if d != g_r.len() {
        return Err(Error::LengthMismatch {
            what: "projection",
            expected: d,
            got: g_r.len(),
        });
    }
    if !(2..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!("brute-force projection supports 2 or 3 dims, got {d}")));
    }
    if resolution < 3 {
        return Err(Error::InvalidArgument("grid resolution must be at least 3".into()));
    }
    if norm(g_r) < crate::combine::TASK_NORM_EPS {
        return Ok(BruteForceProjection { v: g_e.to_vec(), pitch: 0.0 });
    }
    let basis = hyperplane_basis(g_r);
    let point = |t: &[f64]| -> Vec<f64> {
        (0..d).map(|i| basis.iter().zip(t).map(|(b, ti)| b[i] * ti).sum()).collect()
    };
    let cost = |t: &[f64]| -> f64 { point(t).iter().zip(g_e).map(|(v, e)| (e - v).powi(2)).sum() };

    let k = basis.len();
    let mut center = vec![0.0; k];
    let mut half_width = norm(g_e).max(1e-300);
    let mut pitch = 2.0 * half_width / (resolution - 1) as f64;
    for _round in 0..6 {
        pitch = 2.0 * half_width / (resolution - 1) as f64;
        let axis = |c: f64| (0..resolution).map(move |j| c - half_width + j as f64 * pitch);
        let mut best = (f64::INFINITY, center.clone());
        if k == 1 {
            for a in axis(center[0]) {
                let c = cost(&[a]);
                if c < best.0 {
                    best = (c, vec![a]);
                }
            }
        } else {
            for a in axis(center[0]) {
                for b in axis(center[1]) {
                    let c = cost(&[a, b]);
                    if c < best.0 {
                        best = (c, vec![a, b]);
                    }
                }
            }
        }
        center = best.1;
        half_width = 2.0 * pitch;
    }
    Ok(BruteForceProjection {
        v: point(&center),
        pitch,
    })
}

/// Advantages by direct summation `A_t = sum_k (gamma lambda)^k delta_{t+k}`
/// up to and including the first episode boundary at or after `t`.
pub fn gae_direct(rewards: &[f64], values: &[f64], last_value: f64, flags: &[Boundary], gamma: f64, gae_lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta = |t: usize| {
        let next = match flags[t] {
            Boundary::Continue if t + 1 < n => values[t + 1],
            Boundary::Continue => last_value,
            Boundary::Terminated => 0.0,
            Boundary::Truncated(v) => v,
        };
        rewards[t] + gamma * next - values[t]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                total += (gamma * gae_lambda).powi((k - t) as i32) * delta(k);
                if flags[k] != Boundary::Continue {
                    break;
                }
            }
            total
        })
        .collect()
}
