//! Multi-objective PPO.
//!
//! Rewards and values are kept per channel; GAE runs separately on each.
//! The scalarised baseline optimises one clipped surrogate on
//! `A^r - lambda A^e`. The projected variants build two surrogates that share
//! the probability ratios, `L_R` on `A^r` (plus the entropy bonus) and `L_E`
//! on `-A^e`, and merge their gradients with the configured [`Combiner`].

mod gae;
mod train;

pub use gae::{gae, normalize, scalarized_advantage, Boundary};
pub use train::{train, PpoAgent};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph, ParamVector, Tensor, Var};
use crate::combine::{Combiner, Diagnostics, GradPair};
use crate::error::{Error, Result};
use crate::nets::{Activation, Bind, MlpSpec, SquashedGaussianPolicy, ValueNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub lr: f64,
    pub value_lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Per-channel advantage normalisation over each rollout.
    pub normalize_advantages: bool,
    pub combiner: Combiner,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            rollout_len: 2048,
            epochs: 10,
            minibatch_size: 64,
            entropy_coef: 0.0,
            lr: 3e-4,
            value_lr: 1e-3,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            normalize_advantages: true,
            combiner: Combiner::Scalarized { lambda: 0.0 },
            total_steps: 200_000,
            eval_every: 10_000,
            eval_episodes: 50,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidArgument(format!("{field}: {why}")));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps", "must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if self.rollout_len == 0 || self.epochs == 0 || self.minibatch_size == 0 {
            return bad("rollout_len/epochs/minibatch_size", "must be >= 1");
        }
        if self.minibatch_size > self.rollout_len {
            return bad("minibatch_size", "must not exceed rollout_len");
        }
        if !(self.lr > 0.0) || !(self.value_lr > 0.0) {
            return bad("lr/value_lr", "must be positive");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef", "must be >= 0");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every/eval_episodes", "must be >= 1");
        }
        MlpSpec::new(1, &self.hidden, 1, self.activation).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub state: Vec<f64>,
    /// Pre-squash sample; likelihood ratios are taken on it.
    pub raw_action: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob_old: f64,
    pub reward_task: f64,
    pub reward_energy: f64,
    pub value_task: f64,
    pub value_energy: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// Values of the final observation of a truncated episode.
    pub bootstrap_task: f64,
    pub bootstrap_energy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<RolloutStep>,
    pub adv_task: Vec<f64>,
    pub adv_energy: Vec<f64>,
    pub ret_task: Vec<f64>,
    pub ret_energy: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: RolloutStep) -> Result<()> {
        if !step.log_prob_old.is_finite() {
            return Err(Error::NonFinite { op: "rollout log-prob" });
        }
        if !(step.reward_energy >= 0.0) {
            return Err(Error::InvalidArgument("energy reward must be >= 0".into()));
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    fn flags(&self, task: bool) -> Vec<Boundary> {
        self.steps
            .iter()
            .map(|s| {
                if s.terminated {
                    Boundary::Terminated
                } else if s.truncated {
                    Boundary::Truncated(if task { s.bootstrap_task } else { s.bootstrap_energy })
                } else {
                    Boundary::Continue
                }
            })
            .collect()
    }

    /// Per-channel GAE and returns (`A + V`).
    pub fn compute_advantages(&mut self, last_task: f64, last_energy: f64, gamma: f64, gae_lambda: f64) -> Result<()> {
        let col = |f: fn(&RolloutStep) -> f64| self.steps.iter().map(f).collect::<Vec<_>>();
        let (rt, re, vt, ve) = (col(|s| s.reward_task), col(|s| s.reward_energy), col(|s| s.value_task), col(|s| s.value_energy));
        self.adv_task = gae(&rt, &vt, last_task, &self.flags(true), gamma, gae_lambda)?;
        self.adv_energy = gae(&re, &ve, last_energy, &self.flags(false), gamma, gae_lambda)?;
        self.ret_task = self.adv_task.iter().zip(&vt).map(|(a, v)| a + v).collect();
        self.ret_energy = self.adv_energy.iter().zip(&ve).map(|(a, v)| a + v).collect();
        Ok(())
    }
}

/// `-mean(min(r A, clip(r, 1 - eps, 1 + eps) A))` on the graph; the
/// gradient flows through `ratio` only. A ratio of exactly zero is valid:
/// `exp` underflows there once the policy has moved far from an old action.
pub fn clipped_surrogate(g: &mut Graph, ratio: Var, advantages: &[f64], eps: f64) -> Result<Var> {
    let n = g.value(ratio).len();
    if advantages.len() != n {
        return Err(Error::LengthMismatch {
            what: "surrogate advantages",
            expected: n,
            got: advantages.len(),
        });
    }
    if g.value(ratio).data().iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::NonFinite { op: "probability ratio" });
    }
    let adv = g.constant(Tensor::new(g.value(ratio).shape().to_vec(), advantages.to_vec())?);
    let unclipped = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - eps, 1.0 + eps)?;
    let clipped = g.mul(clipped, adv)?;
    let m = g.minimum(unclipped, clipped)?;
    let mean = g.mean(m)?;
    g.neg(mean)
}

/// Scalar value of [`clipped_surrogate`] for plain arrays.
pub fn clipped_surrogate_value(ratios: &[f64], advantages: &[f64], eps: f64) -> Result<f64> {
    let mut g = Graph::new();
    let r = g.constant(Tensor::new(vec![ratios.len(), 1], ratios.to_vec())?);
    let l = clipped_surrogate(&mut g, r, advantages, eps)?;
    Ok(g.value(l).item())
}

/// Inputs of one policy minibatch step.
#[derive(Debug, Clone)]
pub struct PolicyMinibatch {
    pub obs: Tensor,
    pub raw: Tensor,
    pub log_prob_old: Vec<f64>,
    pub adv_task: Vec<f64>,
    pub adv_energy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub direction: ParamVector,
    pub loss_task: f64,
    pub loss_energy: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

/// Surrogate `L(A) - c_ent H` (entropy term only when `with_entropy`) and
/// its gradient.
fn surrogate_grad(
    policy: &SquashedGaussianPolicy,
    mb: &PolicyMinibatch,
    adv: &[f64],
    eps: f64,
    entropy_coef: f64,
    with_entropy: bool,
) -> Result<(f64, ParamVector)> {
    let mut g = Graph::new();
    let o = g.constant(mb.obs.clone());
    let logp = policy.log_prob_raw(&mut g, o, &mb.raw, Bind::Trainable)?;
    let old = g.constant(Tensor::new(vec![mb.log_prob_old.len(), 1], mb.log_prob_old.clone())?);
    let diff = g.sub(logp, old)?;
    let ratio = g.exp(diff)?;
    let mut loss = clipped_surrogate(&mut g, ratio, adv, eps)?;
    if with_entropy && entropy_coef > 0.0 {
        let (_, log_std) = policy.distribution(&mut g, o, Bind::Trainable)?;
        let h = policy.gaussian_entropy(&mut g, log_std)?;
        let h = g.mean(h)?;
        let bonus = g.scale(h, entropy_coef)?;
        loss = g.sub(loss, bonus)?;
    }
    let value = g.value(loss).item();
    let grad = g.backward(loss)?;
    Ok((value, grad))
}

/// Update direction for one minibatch. Scalarised combiners fold the
/// channels in advantage space; the others combine two gradients.
pub fn policy_direction(
    policy: &SquashedGaussianPolicy,
    mb: &PolicyMinibatch,
    clip_eps: f64,
    entropy_coef: f64,
    combiner: Combiner,
) -> Result<PolicyStep> {
    match combiner {
        Combiner::Scalarized { lambda } => {
            let adv = scalarized_advantage(&mb.adv_task, &mb.adv_energy, lambda)?;
            let (loss, grad) = surrogate_grad(policy, mb, &adv, clip_eps, entropy_coef, true)?;
            Ok(PolicyStep {
                direction: grad,
                loss_task: loss,
                loss_energy: None,
                diagnostics: None,
            })
        }
        Combiner::PeGrad | Combiner::PcGradPlus => {
            let (l_r, g_r) = surrogate_grad(policy, mb, &mb.adv_task, clip_eps, entropy_coef, true)?;
            let neg_e: Vec<f64> = mb.adv_energy.iter().map(|a| -a).collect();
            let (l_e, g_e) = surrogate_grad(policy, mb, &neg_e, clip_eps, entropy_coef, false)?;
            let out = combiner.combine(&GradPair::new(g_r, g_e)?)?;
            Ok(PolicyStep {
                direction: out.direction,
                loss_task: l_r,
                loss_energy: Some(l_e),
                diagnostics: Some(out.diagnostics),
            })
        }
    }
}

/// One Adam step of `mean((V(s) - target)^2)`; returns the loss.
pub fn value_update(v: &mut ValueNetwork, adam: &mut AdamState, obs: &Tensor, targets: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let o = g.constant(obs.clone());
    let pred = v.forward(&mut g, o, Bind::Trainable)?;
    let t = g.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
    let d = g.sub(pred, t)?;
    let sq = g.square(d)?;
    let loss = g.mean(sq)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "value loss" });
    }
    let grad = g.backward(loss)?;
    adam.step(v.params_mut(), &grad)?;
    Ok(value)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoUpdateStats {
    pub policy_loss_task: f64,
    pub policy_loss_energy: Option<f64>,
    pub value_loss_task: f64,
    pub value_loss_energy: f64,
    /// Combiner diagnostics of every minibatch, in order.
    pub trace: Vec<Diagnostics>,
}

/// Networks and optimisers touched by [`ppo_update`].
#[derive(Debug, Clone)]
pub struct PpoModels {
    pub policy: SquashedGaussianPolicy,
    pub v_task: ValueNetwork,
    pub v_energy: ValueNetwork,
    pub policy_adam: AdamState,
    pub v_task_adam: AdamState,
    pub v_energy_adam: AdamState,
}

fn gather_rows(rows: &[&[f64]]) -> Result<Tensor> {
    Tensor::from_rows(rows)
}

/// `epochs` passes of shuffled minibatches over a rollout with computed
/// advantages. Statistics are those of the last minibatch.
pub fn ppo_update<R: rand::Rng + ?Sized>(
    models: &mut PpoModels,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoUpdateStats> {
    let n = buffer.len();
    if buffer.adv_task.len() != n || buffer.adv_energy.len() != n {
        return Err(Error::InvalidArgument("advantages must be computed before the update".into()));
    }
    let (adv_task, adv_energy) = if cfg.normalize_advantages {
        (normalize(&buffer.adv_task), normalize(&buffer.adv_energy))
    } else {
        (buffer.adv_task.clone(), buffer.adv_energy.clone())
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoUpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let pick = |f: fn(&RolloutStep) -> &Vec<f64>| {
                gather_rows(&chunk.iter().map(|&i| f(&buffer.steps[i]).as_slice()).collect::<Vec<_>>())
            };
            let obs = pick(|s| &s.state)?;
            let mb = PolicyMinibatch {
                raw: pick(|s| &s.raw_action)?,
                log_prob_old: chunk.iter().map(|&i| buffer.steps[i].log_prob_old).collect(),
                adv_task: chunk.iter().map(|&i| adv_task[i]).collect(),
                adv_energy: chunk.iter().map(|&i| adv_energy[i]).collect(),
                obs: obs.clone(),
            };
            let step = policy_direction(&models.policy, &mb, cfg.clip_eps, cfg.entropy_coef, cfg.combiner)?;
            models.policy_adam.step(models.policy.params_mut(), &step.direction)?;
            stats.policy_loss_task = step.loss_task;
            stats.policy_loss_energy = step.loss_energy;
            if let Some(d) = step.diagnostics {
                stats.trace.push(d);
            }
            let rt: Vec<f64> = chunk.iter().map(|&i| buffer.ret_task[i]).collect();
            let re: Vec<f64> = chunk.iter().map(|&i| buffer.ret_energy[i]).collect();
            stats.value_loss_task = value_update(&mut models.v_task, &mut models.v_task_adam, &obs, &rt)?;
            stats.value_loss_energy = value_update(&mut models.v_energy, &mut models.v_energy_adam, &obs, &re)?;
        }
    }
    Ok(stats)
}
