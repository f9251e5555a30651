//! Gradient combination for a prioritised pair of objectives.
//!
//! The task gradient `g_R` has priority; the energy gradient `g_E` is folded
//! in by one of three strategies. All of them are pure functions over the flat
//! global parameter vector (never per layer) and return the direction that is
//! handed to the optimiser in place of a raw gradient.
//!
//! * [`pegrad_combine`]: always project `g_E` onto the orthogonal complement
//!   of `g_R`, then shrink it so its norm never exceeds `|g_R|`. To first
//!   order, the energy step leaves the task loss unchanged.
//! * [`pcgrad_plus_combine`]: project only when the two conflict
//!   (`g_R . g_E < 0`), otherwise add `g_E` as is; no norm clamp.
//! * [`scalarized_combine`]: `g_R + lambda g_E`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, norm, ParamVector};
use crate::error::{Error, Result};

/// Below this task-gradient norm, projection is skipped (every vector is
/// orthogonal to zero) and `g_E` is returned unchanged.
pub const TASK_NORM_EPS: f64 = 1e-12;

/// Task and energy gradients with respect to the same parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub task: ParamVector,
    pub energy: ParamVector,
}

impl GradPair {
    pub fn new(task: ParamVector, energy: ParamVector) -> Result<Self> {
        task.check_len(&energy)?;
        if !task.all_finite() || !energy.all_finite() {
            return Err(Error::NonFinite { op: "grad pair" });
        }
        Ok(Self { task, energy })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// PEGrad: `min(1, |g_R| / |g_E_perp|)` (1 when `g_E_perp` is zero).
    /// PCGrad+: 1. Scalarised: `lambda`.
    pub beta_scale: f64,
    /// Cosine between `g_R` and `g_E`; 0 if either is zero.
    pub cos_g: f64,
    pub norm_g_r: f64,
    pub norm_g_e: f64,
    /// Norm of the component of `g_E` orthogonal to `g_R`, before any clamp.
    pub norm_g_e_perp: f64,
    /// Whether the projection was applied to `g_E` in forming the direction.
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinerOutput {
    pub direction: ParamVector,
    pub diagnostics: Diagnostics,
}

fn check_inputs(g_e: &ParamVector, g_r: &ParamVector) -> Result<()> {
    g_r.check_len(g_e)?;
    if !g_e.all_finite() || !g_r.all_finite() {
        return Err(Error::NonFinite { op: "combine" });
    }
    Ok(())
}

fn project_slice(g_e: &[f64], g_r: &[f64]) -> Vec<f64> {
    let rr = dot(g_r, g_r);
    if rr.sqrt() < TASK_NORM_EPS {
        return g_e.to_vec();
    }
    let c = dot(g_r, g_e) / rr;
    let mut v: Vec<f64> = g_e.iter().zip(g_r).map(|(e, r)| e - c * r).collect();
    // A second pass removes the rounding residual along g_R, which after one
    // pass is of order eps * |g_E| and can swamp a tiny g_E_perp.
    let c2 = dot(g_r, &v) / rr;
    v.iter_mut().zip(g_r).for_each(|(x, r)| *x -= c2 * r);
    v
}

/// `g_E - (g_R . g_E / g_R . g_R) g_R`, or `g_E` itself when `|g_R|` is
/// below [`TASK_NORM_EPS`].
pub fn project_orthogonal(g_e: &ParamVector, g_r: &ParamVector) -> Result<ParamVector> {
    check_inputs(g_e, g_r)?;
    g_e.with_values(project_slice(g_e.values(), g_r.values()))
}

fn base_diagnostics(g_r: &[f64], g_e: &[f64], perp: &[f64]) -> Diagnostics {
    let (nr, ne) = (norm(g_r), norm(g_e));
    let cos_g = if nr > 0.0 && ne > 0.0 { dot(g_r, g_e) / (nr * ne) } else { 0.0 };
    Diagnostics {
        beta_scale: 1.0,
        cos_g,
        norm_g_r: nr,
        norm_g_e: ne,
        norm_g_e_perp: norm(perp),
        projected: false,
    }
}

fn sum_into(task: &ParamVector, extra: &[f64]) -> Result<ParamVector> {
    let values = task.values().iter().zip(extra).map(|(r, e)| r + e).collect();
    task.with_values(values)
}

pub fn pegrad_combine(pair: &GradPair) -> Result<CombinerOutput> {
    check_inputs(&pair.energy, &pair.task)?;
    let (g_r, g_e) = (pair.task.values(), pair.energy.values());
    let mut v = project_slice(g_e, g_r);
    let mut diagnostics = base_diagnostics(g_r, g_e, &v);
    let (nr, nv) = (diagnostics.norm_g_r, diagnostics.norm_g_e_perp);
    if nv > nr {
        let s = nr / nv;
        v.iter_mut().for_each(|x| *x *= s);
    }
    diagnostics.beta_scale = if nv == 0.0 { 1.0 } else { (nr / nv).min(1.0) };
    diagnostics.projected = true;
    Ok(CombinerOutput {
        direction: sum_into(&pair.task, &v)?,
        diagnostics,
    })
}

pub fn pcgrad_plus_combine(pair: &GradPair) -> Result<CombinerOutput> {
    check_inputs(&pair.energy, &pair.task)?;
    let (g_r, g_e) = (pair.task.values(), pair.energy.values());
    let perp = project_slice(g_e, g_r);
    let mut diagnostics = base_diagnostics(g_r, g_e, &perp);
    let conflict = dot(g_r, g_e) < 0.0;
    diagnostics.projected = conflict;
    let added = if conflict { &perp[..] } else { g_e };
    Ok(CombinerOutput {
        direction: sum_into(&pair.task, added)?,
        diagnostics,
    })
}

pub fn scalarized_combine(pair: &GradPair, lambda: f64) -> Result<CombinerOutput> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    check_inputs(&pair.energy, &pair.task)?;
    let (g_r, g_e) = (pair.task.values(), pair.energy.values());
    let perp = project_slice(g_e, g_r);
    let mut diagnostics = base_diagnostics(g_r, g_e, &perp);
    diagnostics.beta_scale = lambda;
    let scaled: Vec<f64> = g_e.iter().map(|e| lambda * e).collect();
    Ok(CombinerOutput {
        direction: sum_into(&pair.task, &scaled)?,
        diagnostics,
    })
}

/// Strategy selector, written in configs as `pegrad`, `pcgrad_plus` or
/// `scalarized(<lambda>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Combiner {
    PeGrad,
    PcGradPlus,
    Scalarized { lambda: f64 },
}

impl Combiner {
    pub fn combine(&self, pair: &GradPair) -> Result<CombinerOutput> {
        match *self {
            Combiner::PeGrad => pegrad_combine(pair),
            Combiner::PcGradPlus => pcgrad_plus_combine(pair),
            Combiner::Scalarized { lambda } => scalarized_combine(pair, lambda),
        }
    }

    /// Filesystem-friendly label, e.g. `scalarized_0.01`.
    pub fn label(&self) -> String {
        match self {
            Combiner::PeGrad => "pegrad".into(),
            Combiner::PcGradPlus => "pcgrad_plus".into(),
            Combiner::Scalarized { lambda } => format!("scalarized_{lambda}"),
        }
    }
}

impl std::fmt::Display for Combiner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Combiner::PeGrad => f.write_str("pegrad"),
            Combiner::PcGradPlus => f.write_str("pcgrad_plus"),
            Combiner::Scalarized { lambda } => write!(f, "scalarized({lambda})"),
        }
    }
}

impl std::str::FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "pegrad" => return Ok(Combiner::PeGrad),
            "pcgrad_plus" => return Ok(Combiner::PcGradPlus),
            _ => {}
        }
        let bad = || Error::InvalidArgument(format!("unknown combiner `{s}`"));
        let inner = s
            .strip_prefix("scalarized(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let lambda: f64 = inner.trim().parse().map_err(|_| bad())?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Combiner::Scalarized { lambda })
    }
}

impl Serialize for Combiner {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Combiner {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_tensors([("g", Tensor::new(vec![v.len()], v.to_vec()).unwrap())])
    }

    fn pair(r: &[f64], e: &[f64]) -> GradPair {
        GradPair::new(pv(r), pv(e)).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_orthogonal(&pv(&[0.0, 1.0]), &pv(&[1.0, 0.0])).unwrap().values(), &[0.0, 1.0]);
        assert_eq!(project_orthogonal(&pv(&[2.0, 0.0]), &pv(&[1.0, 0.0])).unwrap().values(), &[0.0, 0.0]);
        assert_eq!(project_orthogonal(&pv(&[1.0, 1.0]), &pv(&[1.0, 0.0])).unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn projection_errors_and_zero_guard() {
        assert!(project_orthogonal(&pv(&[1.0]), &pv(&[1.0, 0.0])).is_err());
        assert!(project_orthogonal(&pv(&[f64::NAN, 0.0]), &pv(&[1.0, 0.0])).is_err());
        let ge = pv(&[3.0, -4.0]);
        assert_eq!(project_orthogonal(&ge, &pv(&[0.0, 1e-13])).unwrap(), ge);
    }

    #[test]
    fn pegrad_examples() {
        let out = pegrad_combine(&pair(&[1.0, 0.0], &[1.0, 1.0])).unwrap();
        assert_eq!(out.direction.values(), &[1.0, 1.0]);
        assert_eq!(out.diagnostics.beta_scale, 1.0);

        let out = pegrad_combine(&pair(&[1.0, 0.0], &[0.0, 5.0])).unwrap();
        assert_eq!(out.direction.values(), &[1.0, 1.0]);
        assert!((out.diagnostics.beta_scale - 0.2).abs() < 1e-15);
        assert_eq!(out.diagnostics.norm_g_e_perp, 5.0);

        let out = pegrad_combine(&pair(&[0.3, -2.0], &[0.0, 0.0])).unwrap();
        assert_eq!(out.direction.values(), &[0.3, -2.0]);
        assert_eq!(out.diagnostics.beta_scale, 1.0);
    }

    #[test]
    fn pegrad_degenerate_task_gradient_gives_near_zero_energy_step() {
        let out = pegrad_combine(&pair(&[0.0, 0.0], &[3.0, 4.0])).unwrap();
        assert_eq!(out.direction.values(), &[0.0, 0.0]);
        assert_eq!(out.diagnostics.beta_scale, 0.0);
    }

    #[test]
    fn pcgrad_plus_examples() {
        let out = pcgrad_plus_combine(&pair(&[1.0, 0.0], &[1.0, 1.0])).unwrap();
        assert_eq!(out.direction.values(), &[2.0, 1.0]);
        assert!(!out.diagnostics.projected);

        let out = pcgrad_plus_combine(&pair(&[1.0, 0.0], &[-1.0, 1.0])).unwrap();
        assert_eq!(out.direction.values(), &[1.0, 1.0]);
        assert!(out.diagnostics.projected);
        assert!(out.diagnostics.cos_g < 0.0);

        let out = pcgrad_plus_combine(&pair(&[1.0, 2.0], &[0.0, 0.0])).unwrap();
        assert_eq!(out.direction.values(), &[1.0, 2.0]);
    }

    #[test]
    fn scalarized_examples() {
        let out = scalarized_combine(&pair(&[1.0, 2.0], &[5.0, 5.0]), 0.0).unwrap();
        assert_eq!(out.direction.values(), &[1.0, 2.0]);
        let out = scalarized_combine(&pair(&[1.0, -2.0], &[-1.0, 2.0]), 1.0).unwrap();
        assert_eq!(out.direction.values(), &[0.0, 0.0]);
        let out = scalarized_combine(&pair(&[1.0, 0.0], &[0.0, 1.0]), 0.01).unwrap();
        assert_eq!(out.direction.values(), &[1.0, 0.01]);
        assert!(scalarized_combine(&pair(&[1.0], &[1.0]), -0.5).is_err());
    }

    #[test]
    fn combiner_strings_round_trip() {
        for c in [
            Combiner::PeGrad,
            Combiner::PcGradPlus,
            Combiner::Scalarized { lambda: 0.0 },
            Combiner::Scalarized { lambda: 0.001 },
            Combiner::Scalarized { lambda: 0.5 },
        ] {
            assert_eq!(c.to_string().parse::<Combiner>().unwrap(), c);
        }
        assert!("scalarized(-1)".parse::<Combiner>().is_err());
        assert!("cagrad".parse::<Combiner>().is_err());
    }
}
