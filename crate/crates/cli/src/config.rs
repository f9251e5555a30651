//! Flat TOML run configuration.
//!
//! Every key sits at the top level. Algorithm-specific keys are optional;
//! when absent, the algorithm's defaults apply. Keys that belong to the
//! other algorithm are accepted and ignored, so one file can drive both.

use std::path::{Path, PathBuf};

use pegrad_core::nets::Activation;
use pegrad_core::ppo::PpoConfig;
use pegrad_core::sac::SacConfig;
use pegrad_core::{Combiner, EnergyMode, EnvId};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Sac,
    Ppo,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sac => "sac",
            Algorithm::Ppo => "ppo",
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_eval_episodes() -> usize {
    50
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_jobs() -> usize {
    1
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub algorithm: Algorithm,
    /// `pendulum`, `pointmass` or `chain3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    #[serde(default = "default_combiner")]
    pub combiner: Combiner,
    #[serde(default, skip_serializing_if = "is_default")]
    pub energy_mode: EnergyMode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Environment steps per run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<u64>,
    /// Environment steps between evaluations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<u64>,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Seeds trained concurrently.
    #[serde(default = "default_jobs")]
    pub jobs: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,

    // SAC
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_update_every: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_update_every: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polyak: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twin_q: Option<bool>,

    // PPO
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gae_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_coef: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_advantages: Option<bool>,
}

fn default_combiner() -> Combiner {
    Combiner::PeGrad
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })+
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    pub fn env_id(&self) -> Result<EnvId, CliError> {
        let name = self
            .env
            .as_deref()
            .ok_or_else(|| CliError::Config("env: missing environment id (pendulum | pointmass | chain3)".into()))?;
        name.parse()
            .map_err(|_| CliError::Config(format!("env: unknown environment `{name}`")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env_id()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds: at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("seeds: seeds must be distinct".into()));
        }
        if self.eval_episodes == 0 {
            return Err(CliError::Config("eval_episodes: must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(CliError::Config("jobs: must be >= 1".into()));
        }
        let checked = match self.algorithm {
            Algorithm::Sac => self.sac_config().validate(),
            Algorithm::Ppo => self.ppo_config().validate(),
        };
        checked.map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn sac_config(&self) -> SacConfig {
        let mut c = SacConfig {
            combiner: self.combiner,
            eval_episodes: self.eval_episodes,
            ..SacConfig::default()
        };
        overlay!(
            c, self, total_steps, eval_every, hidden, activation, gamma, entropy_alpha, batch_size, actor_lr,
            critic_lr, actor_update_every, critic_update_every, polyak, warmup_steps, buffer_capacity, twin_q
        );
        c
    }

    pub fn ppo_config(&self) -> PpoConfig {
        let mut c = PpoConfig {
            combiner: self.combiner,
            eval_episodes: self.eval_episodes,
            ..PpoConfig::default()
        };
        overlay!(
            c, self, total_steps, eval_every, hidden, activation, gamma, gae_lambda, clip_eps, rollout_len, epochs,
            minibatch_size, entropy_coef, lr, value_lr, normalize_advantages
        );
        c
    }
}
