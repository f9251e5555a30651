//! Multi-objective soft actor-critic.
//!
//! One critic per reward channel, each trained on its own soft Bellman
//! target. The actor loss is split into a task part `E[alpha ln pi - Q^r]`
//! and an energy part `E[alpha ln pi + Q^e]`, evaluated on the same minibatch
//! and the same reparameterisation noise; their gradients are merged by a
//! [`Combiner`] and the result drives a single Adam step.

mod buffer;
mod train;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use train::{train, train_agent};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Graph, ParamVector, Tensor};
use crate::combine::{Combiner, Diagnostics, GradPair};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nets::{standard_normal, Activation, Bind, MlpSpec, QNetwork, SquashedGaussianPolicy};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub entropy_alpha: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_update_every: u64,
    pub critic_update_every: u64,
    pub polyak: f64,
    /// Uniform-random steps before any update.
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub buffer_capacity: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Two critics per channel; task targets take the min, energy targets
    /// the max (pessimistic for both objectives).
    pub twin_q: bool,
    pub combiner: Combiner,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            entropy_alpha: 0.2,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            actor_update_every: 2,
            critic_update_every: 1,
            polyak: 0.005,
            warmup_steps: 5000,
            total_steps: 100_000,
            buffer_capacity: 1_000_000,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            twin_q: false,
            combiner: Combiner::PeGrad,
            eval_every: 5000,
            eval_episodes: 50,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidArgument(format!("{field}: {why}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(self.entropy_alpha >= 0.0) || !self.entropy_alpha.is_finite() {
            return bad("entropy_alpha", "must be >= 0");
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("actor_lr/critic_lr", "must be positive");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak", "must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size", "must be >= 1 and fit in the buffer");
        }
        if self.actor_update_every == 0 || self.critic_update_every == 0 {
            return bad("actor_update_every/critic_update_every", "must be >= 1");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every/eval_episodes", "must be >= 1");
        }
        MlpSpec::new(1, &self.hidden, 1, self.activation).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Task,
    Energy,
}

/// Online and target critics (one or two of each) for one reward channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCritic {
    pub channel: Channel,
    pub nets: Vec<QNetwork>,
    pub targets: Vec<QNetwork>,
    adams: Vec<AdamState>,
}

impl ChannelCritic {
    pub fn new(channel: Channel, nets: Vec<QNetwork>, lr: f64) -> Result<Self> {
        if nets.is_empty() || nets.len() > 2 {
            return Err(Error::InvalidArgument("a channel has one or two critics".into()));
        }
        let adams = nets.iter().map(|q| AdamState::new(q.params().len(), lr)).collect();
        Ok(Self {
            channel,
            targets: nets.clone(),
            nets,
            adams,
        })
    }

    /// Ensemble reduction used for both targets and actor losses: the
    /// pessimistic value for this channel.
    fn reduce(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let mut out = values[0].clone();
        for v in &values[1..] {
            for (o, x) in out.iter_mut().zip(v) {
                *o = match self.channel {
                    Channel::Task => o.min(*x),
                    Channel::Energy => o.max(*x),
                };
            }
        }
        out
    }

    pub fn target_value(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        let vals = self.targets.iter().map(|q| q.q_value(obs, act)).collect::<Result<Vec<_>>>()?;
        Ok(self.reduce(&vals))
    }

    pub fn value(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        let vals = self.nets.iter().map(|q| q.q_value(obs, act)).collect::<Result<Vec<_>>>()?;
        Ok(self.reduce(&vals))
    }

    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        for (t, q) in self.targets.iter_mut().zip(&self.nets) {
            crate::nets::polyak_update(t.params_mut(), q.params(), tau)?;
        }
        Ok(())
    }
}

/// Soft Bellman targets `r + gamma (1 - terminated) (Q_targ(s', a') - alpha ln pi(a'|s'))`.
pub fn soft_targets(
    critic: &ChannelCritic,
    batch: &Batch,
    rewards: &[f64],
    next_actions: &Tensor,
    next_log_probs: &[f64],
    gamma: f64,
    alpha: f64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    if rewards.len() != n || next_log_probs.len() != n {
        return Err(Error::LengthMismatch {
            what: "critic targets",
            expected: n,
            got: rewards.len().min(next_log_probs.len()),
        });
    }
    let next_q = critic.target_value(&batch.next_obs, next_actions)?;
    Ok((0..n)
        .map(|i| {
            let cont = if batch.terminated[i] { 0.0 } else { 1.0 };
            rewards[i] + gamma * cont * (next_q[i] - alpha * next_log_probs[i])
        })
        .collect())
}

/// One Adam step on every online critic of the channel against the mean
/// squared TD error. Returns the loss (averaged over the ensemble).
pub fn critic_update(
    critic: &mut ChannelCritic,
    batch: &Batch,
    rewards: &[f64],
    next_actions: &Tensor,
    next_log_probs: &[f64],
    gamma: f64,
    alpha: f64,
) -> Result<f64> {
    let y = soft_targets(critic, batch, rewards, next_actions, next_log_probs, gamma, alpha)?;
    let y = Tensor::new(vec![y.len(), 1], y)?;
    let mut total = 0.0;
    for (q, adam) in critic.nets.iter_mut().zip(&mut critic.adams) {
        let mut g = Graph::new();
        let (o, a, t) = (g.constant(batch.obs.clone()), g.constant(batch.act.clone()), g.constant(y.clone()));
        let pred = q.forward(&mut g, o, a, Bind::Trainable)?;
        let diff = g.sub(pred, t)?;
        let sq = g.square(diff)?;
        let loss = g.mean(sq)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "critic loss" });
        }
        let grad = g.backward(loss)?;
        adam.step(q.params_mut(), &grad)?;
        total += value;
    }
    Ok(total / critic.nets.len() as f64)
}

/// Actor loss for one channel and its gradient with respect to the policy.
/// Critics enter the graph frozen.
pub fn actor_loss_grad(
    policy: &SquashedGaussianPolicy,
    critic: &ChannelCritic,
    obs: &Tensor,
    noise: &Tensor,
    alpha: f64,
) -> Result<(f64, ParamVector)> {
    let mut g = Graph::new();
    let o = g.constant(obs.clone());
    let (action, log_prob) = policy.rsample(&mut g, o, noise, Bind::Trainable)?;
    let mut qs = Vec::with_capacity(critic.nets.len());
    for q in &critic.nets {
        qs.push(q.forward(&mut g, o, action, Bind::Frozen)?);
    }
    let mut q = qs[0];
    for &other in &qs[1..] {
        q = match critic.channel {
            Channel::Task => g.minimum(q, other)?,
            Channel::Energy => {
                let (nq, no) = (g.neg(q)?, g.neg(other)?);
                let m = g.minimum(nq, no)?;
                g.neg(m)?
            }
        };
    }
    let ent = g.scale(log_prob, alpha)?;
    let per_row = match critic.channel {
        Channel::Task => g.sub(ent, q)?,
        Channel::Energy => g.add(ent, q)?,
    };
    let loss = g.mean(per_row)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "actor loss" });
    }
    let grad = g.backward(loss)?;
    Ok((value, grad))
}

/// `(L_R, L_E)` on a shared minibatch and shared noise.
pub fn actor_losses(
    policy: &SquashedGaussianPolicy,
    q_task: &ChannelCritic,
    q_energy: &ChannelCritic,
    obs: &Tensor,
    noise: &Tensor,
    alpha: f64,
) -> Result<(f64, f64)> {
    let (l_r, _) = actor_loss_grad(policy, q_task, obs, noise, alpha)?;
    let (l_e, _) = actor_loss_grad(policy, q_energy, obs, noise, alpha)?;
    Ok((l_r, l_e))
}

/// Applies one optimiser step along the combined direction. With no energy
/// gradient the task gradient is used as is (single-objective SAC).
pub fn actor_update(
    policy: &mut SquashedGaussianPolicy,
    adam: &mut AdamState,
    g_task: ParamVector,
    g_energy: Option<ParamVector>,
    combiner: Combiner,
) -> Result<Option<Diagnostics>> {
    let (direction, diagnostics) = match g_energy {
        None => (g_task, None),
        Some(g_e) => {
            let out = combiner.combine(&GradPair::new(g_task, g_e)?)?;
            (out.direction, Some(out.diagnostics))
        }
    };
    adam.step(policy.params_mut(), &direction)?;
    Ok(diagnostics)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorReport {
    pub loss_task: f64,
    pub loss_energy: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub critic_loss_task: Option<f64>,
    pub critic_loss_energy: Option<f64>,
    pub actor: Option<ActorReport>,
}

/// Policy, critics, optimisers and the RNG streams consumed by updates.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub policy: SquashedGaussianPolicy,
    pub q_task: ChannelCritic,
    /// `None` trains plain single-objective SAC on the task channel.
    pub q_energy: Option<ChannelCritic>,
    pub actor_adam: AdamState,
    replay_rng: Rng,
    noise_rng: Rng,
    updates: u64,
}

impl SacAgent {
    /// Multi-objective agent.
    pub fn new(spec: &EnvSpec, cfg: SacConfig, seed: u64) -> Result<Self> {
        Self::build(spec, cfg, seed, true)
    }

    /// Reference agent without an energy critic.
    pub fn single_objective(spec: &EnvSpec, cfg: SacConfig, seed: u64) -> Result<Self> {
        Self::build(spec, cfg, seed, false)
    }

    fn build(spec: &EnvSpec, cfg: SacConfig, seed: u64, with_energy: bool) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let pspec = MlpSpec::new(spec.obs_dim, &cfg.hidden, spec.act_dim, cfg.activation)?;
        let policy = SquashedGaussianPolicy::new(pspec, &spec.low, &spec.high, &mut stream(seed, Stream::PolicyInit))?;
        let qspec = QNetwork::spec_for(spec.obs_dim, spec.act_dim, &cfg.hidden, cfg.activation)?;
        let make = |first: Stream, second: Stream, channel: Channel| -> Result<ChannelCritic> {
            let mut nets = vec![QNetwork::new(spec.obs_dim, spec.act_dim, qspec.clone(), &mut stream(seed, first))?];
            if cfg.twin_q {
                nets.push(QNetwork::new(spec.obs_dim, spec.act_dim, qspec.clone(), &mut stream(seed, second))?);
            }
            ChannelCritic::new(channel, nets, cfg.critic_lr)
        };
        let q_task = make(Stream::TaskCriticInit, Stream::TaskCriticInit2, Channel::Task)?;
        let q_energy = if with_energy {
            Some(make(Stream::EnergyCriticInit, Stream::EnergyCriticInit2, Channel::Energy)?)
        } else {
            None
        };
        Ok(Self {
            actor_adam: AdamState::new(policy.params().len(), cfg.actor_lr),
            policy,
            q_task,
            q_energy,
            replay_rng: stream(seed, Stream::Replay),
            noise_rng: stream(seed, Stream::UpdateNoise),
            updates: 0,
            cfg,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One gradient step: critics every `critic_update_every` calls, the
    /// actor every `actor_update_every` calls, both on the same minibatch.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<UpdateReport> {
        self.updates += 1;
        let cfg = &self.cfg;
        let batch = buffer.sample(cfg.batch_size, &mut self.replay_rng)?;
        let mut report = UpdateReport::default();
        if self.updates.is_multiple_of(cfg.critic_update_every) {
            let next = self.policy.sample(&batch.next_obs, &mut self.noise_rng)?;
            let (gamma, alpha) = (cfg.gamma, cfg.entropy_alpha);
            report.critic_loss_task = Some(critic_update(
                &mut self.q_task,
                &batch,
                &batch.reward_task,
                &next.action,
                &next.log_prob,
                gamma,
                alpha,
            )?);
            self.q_task.update_targets(cfg.polyak)?;
            if let Some(qe) = &mut self.q_energy {
                report.critic_loss_energy = Some(critic_update(
                    qe,
                    &batch,
                    &batch.reward_energy,
                    &next.action,
                    &next.log_prob,
                    gamma,
                    alpha,
                )?);
                qe.update_targets(cfg.polyak)?;
            }
        }
        if self.updates.is_multiple_of(cfg.actor_update_every) {
            let noise = standard_normal(batch.len(), self.policy.act_dim(), &mut self.noise_rng);
            let alpha = cfg.entropy_alpha;
            let (loss_task, g_task) = actor_loss_grad(&self.policy, &self.q_task, &batch.obs, &noise, alpha)?;
            let energy = match &self.q_energy {
                Some(qe) => Some(actor_loss_grad(&self.policy, qe, &batch.obs, &noise, alpha)?),
                None => None,
            };
            let (loss_energy, g_energy) = match energy {
                Some((l, g)) => (Some(l), Some(g)),
                None => (None, None),
            };
            let diagnostics = actor_update(&mut self.policy, &mut self.actor_adam, g_task, g_energy, cfg.combiner)?;
            report.actor = Some(ActorReport {
                loss_task,
                loss_energy,
                diagnostics,
            });
        }
        Ok(report)
    }

    /// Named parameter sets of every network other than the policy.
    pub fn networks(&self) -> Vec<(String, ParamVector)> {
        let mut out = Vec::new();
        let mut add = |name: &str, c: &ChannelCritic| {
            for (i, q) in c.nets.iter().enumerate() {
                let suffix = if i == 0 { String::new() } else { (i + 1).to_string() };
                out.push((format!("{name}{suffix}"), q.params().clone()));
            }
        };
        add("q_task", &self.q_task);
        if let Some(qe) = &self.q_energy {
            add("q_energy", qe);
        }
        out
    }
}
