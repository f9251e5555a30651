//! Control environments with a two-channel (task, energy) reward.
//!
//! Actions are applied directly as torques/forces. The energy channel is the
//! summed absolute actuator effort of the step, or the summed absolute
//! mechanical power when [`EnergyMode::MechPower`] is selected.

mod chain;
mod pendulum;
mod pointmass;

pub use chain::{policy_evaluation, value_iteration, ChainEnv, QTable, TabularMdp};
pub use pendulum::PendulumSwingup;
pub use pointmass::PointMassReach;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step vector reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorReward {
    pub task: f64,
    /// Summed actuator effort; never negative.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// `sum_m |tau_m|`
    #[default]
    AbsTorque,
    /// `sum_m |tau_m * omega_m|`
    MechPower,
}

impl std::str::FromStr for EnergyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs_torque" => Ok(Self::AbsTorque),
            "mech_power" => Ok(Self::MechPower),
            other => Err(Error::InvalidArgument(format!("unknown energy mode `{other}`"))),
        }
    }
}

impl EnergyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AbsTorque => "abs_torque",
            Self::MechPower => "mech_power",
        }
    }

    /// Energy of one step given actuator efforts and the matching joint
    /// velocities.
    pub fn energy(self, effort: &[f64], velocity: &[f64]) -> f64 {
        match self {
            Self::AbsTorque => effort.iter().map(|t| t.abs()).sum(),
            Self::MechPower => effort.iter().zip(velocity).map(|(t, w)| (t * w).abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Integration step in seconds.
    pub dt: f64,
    pub horizon: usize,
    pub energy_mode: EnergyMode,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.low.len() != self.act_dim || self.high.len() != self.act_dim {
            return Err(Error::InvalidArgument("action bounds do not match act_dim".into()));
        }
        if self.low.iter().zip(&self.high).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("action low must be < high".into()));
        }
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("horizon >= 1 and dt > 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub reward: VectorReward,
    /// True MDP termination; only this flag stops bootstrapping.
    pub terminated: bool,
    /// Horizon reached.
    pub truncated: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Draws a start state from the environment's start distribution,
    /// deterministically in `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances by one control step. Out-of-bounds actions are clamped and
    /// counted in [`Env::clamped_actions`].
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    fn clamped_actions(&self) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Pendulum,
    Pointmass,
    Chain3,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pendulum => "pendulum",
            Self::Pointmass => "pointmass",
            Self::Chain3 => "chain3",
        }
    }

    pub fn make(self, energy_mode: EnergyMode) -> Box<dyn Env> {
        match self {
            Self::Pendulum => Box::new(PendulumSwingup::new(energy_mode)),
            Self::Pointmass => Box::new(PointMassReach::new(energy_mode)),
            Self::Chain3 => Box::new(ChainEnv::new(TabularMdp::chain3())),
        }
    }
}

impl std::str::FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "pointmass" => Ok(Self::Pointmass),
            "chain3" => Ok(Self::Chain3),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Clamps `action` into the spec bounds, returning whether anything changed.
pub(crate) fn clamp_action(spec: &EnvSpec, action: &[f64]) -> Result<(Vec<f64>, bool)> {
    if action.len() != spec.act_dim {
        return Err(Error::LengthMismatch {
            what: "action",
            expected: spec.act_dim,
            got: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite { op: "action" });
    }
    let mut clamped = false;
    let out = action
        .iter()
        .zip(spec.low.iter().zip(&spec.high))
        .map(|(&a, (&lo, &hi))| {
            let c = a.clamp(lo, hi);
            clamped |= c != a;
            c
        })
        .collect();
    Ok((out, clamped))
}
