//! Pieces shared by the SAC and PPO training loops: deterministic evaluation,
//! episode bookkeeping and the outcome of a finished (or aborted) run.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamVector, Tensor};
use crate::combine::Diagnostics;
use crate::envs::{EnergyMode, EnvId};
use crate::error::Result;
use crate::metrics::{MetricsLog, MetricsRow};
use crate::nets::SquashedGaussianPolicy;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalSummary {
    pub fn from_episodes(returns: &[f64], energies: &[f64]) -> Self {
        let (return_mean, return_std) = mean_std(returns);
        let (energy_mean, energy_std) = mean_std(energies);
        Self {
            episodes: returns.len(),
            return_mean,
            return_std,
            energy_mean,
            energy_std,
        }
    }
}

/// Fixed evaluation start seeds for a run; the same set is reused at every
/// evaluation point so successive evaluations are comparable.
pub fn eval_seeds(run_seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream(run_seed, Stream::Eval);
    (0..episodes).map(|_| rng.random()).collect()
}

/// Runs one episode per seed with the deterministic (mean) action. All
/// episodes advance in lockstep so the policy is evaluated once per step on
/// the whole batch.
pub fn evaluate_policy(
    policy: &SquashedGaussianPolicy,
    env_id: EnvId,
    energy_mode: EnergyMode,
    seeds: &[u64],
) -> Result<EvalSummary> {
    let mut envs: Vec<_> = seeds.iter().map(|_| env_id.make(energy_mode)).collect();
    let mut obs: Vec<Vec<f64>> = envs.iter_mut().zip(seeds).map(|(e, &s)| e.reset(s)).collect();
    let mut active: Vec<bool> = vec![true; envs.len()];
    let mut returns = vec![0.0; envs.len()];
    let mut energies = vec![0.0; envs.len()];
    while active.iter().any(|&a| a) {
        let idx: Vec<usize> = (0..envs.len()).filter(|&i| active[i]).collect();
        let batch = Tensor::from_rows(&idx.iter().map(|&i| &obs[i]).collect::<Vec<_>>())?;
        let actions = policy.mean_action(&batch)?;
        for (row, &i) in idx.iter().enumerate() {
            let r = envs[i].step(actions.row(row))?;
            returns[i] += r.reward.task;
            energies[i] += r.reward.energy;
            obs[i] = r.next_obs;
            if r.terminated || r.truncated {
                active[i] = false;
            }
        }
    }
    Ok(EvalSummary::from_episodes(&returns, &energies))
}

/// Running totals of the current training episode.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EpisodeTracker {
    pub ret: f64,
    pub energy: f64,
}

impl EpisodeTracker {
    pub fn add(&mut self, task: f64, energy: f64) {
        self.ret += task;
        self.energy += energy;
    }

    /// Returns the finished totals and starts a new episode.
    pub fn finish(&mut self) -> (f64, f64) {
        let out = (self.ret, self.energy);
        *self = Self::default();
        out
    }
}

/// Latest optimisation statistics, copied onto every logged row.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LatestStats {
    pub critic_loss_task: Option<f64>,
    pub critic_loss_energy: Option<f64>,
    pub actor_loss_task: Option<f64>,
    pub actor_loss_energy: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

impl LatestStats {
    pub fn fill(&self, row: &mut MetricsRow) {
        row.critic_loss_task = self.critic_loss_task;
        row.critic_loss_energy = self.critic_loss_energy;
        row.actor_loss_task = self.actor_loss_task;
        row.actor_loss_energy = self.actor_loss_energy;
        if let Some(d) = self.diagnostics {
            row.beta_scale = Some(d.beta_scale);
            row.cos_g = Some(d.cos_g);
            row.norm_g_r = Some(d.norm_g_r);
            row.norm_g_e_perp = Some(d.norm_g_e_perp);
        }
    }
}

/// Best evaluation seen during a run together with the policy that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct BestCheckpoint {
    pub step: u64,
    pub eval: EvalSummary,
    pub policy_params: ParamVector,
}

/// Everything a training run produces. A run that hit a divergence or a
/// numerical failure still returns its partial log with `failure` set.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: MetricsLog,
    /// Combiner diagnostics of every actor update, in order.
    pub trace: Vec<Diagnostics>,
    pub policy: SquashedGaussianPolicy,
    /// Other trained networks, keyed by a name prefix such as `q_task`.
    pub networks: Vec<(String, ParamVector)>,
    pub final_eval: Option<EvalSummary>,
    pub best: Option<BestCheckpoint>,
    pub steps_done: u64,
    pub clamped_actions: u64,
    pub failure: Option<String>,
}

/// Shared evaluation-and-logging step used at the end of each env step.
pub(crate) struct EvalContext {
    pub env_id: EnvId,
    pub energy_mode: EnergyMode,
    pub seeds: Vec<u64>,
    pub every: u64,
    pub total: u64,
}

impl EvalContext {
    pub fn due(&self, step: u64) -> bool {
        step.is_multiple_of(self.every) || step == self.total
    }

    pub fn run(
        &self,
        step: u64,
        policy: &SquashedGaussianPolicy,
        row: &mut MetricsRow,
        best: &mut Option<BestCheckpoint>,
        last: &mut Option<EvalSummary>,
    ) -> Result<()> {
        let eval = evaluate_policy(policy, self.env_id, self.energy_mode, &self.seeds)?;
        row.eval_return_mean = Some(eval.return_mean);
        row.eval_energy_mean = Some(eval.energy_mean);
        if best.as_ref().is_none_or(|b| eval.return_mean > b.eval.return_mean) {
            *best = Some(BestCheckpoint {
                step,
                eval,
                policy_params: policy.params().clone(),
            });
        }
        *last = Some(eval);
        Ok(())
    }
}

/// Pushes `row` if it carries anything beyond the step number.
pub(crate) fn push_if_any(log: &mut MetricsLog, row: MetricsRow) -> Result<()> {
    if row.episode_return_task.is_some() || row.is_eval() {
        log.push(row)?;
    }
    Ok(())
}
