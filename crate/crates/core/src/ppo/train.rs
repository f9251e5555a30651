use std::io::Write;

use rand::Rng as _;

use super::{ppo_update, PpoConfig, PpoModels, RolloutBuffer, RolloutStep};
use crate::autodiff::{AdamState, Tensor};
use crate::envs::{EnergyMode, EnvId, EnvSpec};
use crate::error::Result;
use crate::metrics::{MetricsLog, MetricsRow};
use crate::nets::{MlpSpec, SquashedGaussianPolicy, ValueNetwork};
use crate::rng::{stream, Rng, Stream};
use crate::runner::{eval_seeds, push_if_any, EpisodeTracker, EvalContext, LatestStats, RunOutcome};

#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub cfg: PpoConfig,
    pub models: PpoModels,
    minibatch_rng: Rng,
}

impl PpoAgent {
    pub fn new(spec: &EnvSpec, cfg: PpoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let pspec = MlpSpec::new(spec.obs_dim, &cfg.hidden, spec.act_dim, cfg.activation)?;
        let vspec = MlpSpec::new(spec.obs_dim, &cfg.hidden, 1, cfg.activation)?;
        let policy = SquashedGaussianPolicy::new(pspec, &spec.low, &spec.high, &mut stream(seed, Stream::PolicyInit))?;
        let v_task = ValueNetwork::new(vspec.clone(), &mut stream(seed, Stream::TaskValueInit))?;
        let v_energy = ValueNetwork::new(vspec, &mut stream(seed, Stream::EnergyValueInit))?;
        let models = PpoModels {
            policy_adam: AdamState::new(policy.params().len(), cfg.lr),
            v_task_adam: AdamState::new(v_task.params().len(), cfg.value_lr),
            v_energy_adam: AdamState::new(v_energy.params().len(), cfg.value_lr),
            policy,
            v_task,
            v_energy,
        };
        Ok(Self {
            cfg,
            models,
            minibatch_rng: stream(seed, Stream::Minibatch),
        })
    }

    fn values(&self, obs: &[f64]) -> Result<(f64, f64)> {
        let o = Tensor::new(vec![1, obs.len()], obs.to_vec())?;
        Ok((self.models.v_task.value(&o)?[0], self.models.v_energy.value(&o)?[0]))
    }
}

/// On-policy training: collect `rollout_len` steps, compute per-channel
/// advantages, run the PPO update, repeat until `total_steps`. A trailing
/// partial rollout is collected (and logged) but not used for an update.
pub fn train(
    env_id: EnvId,
    energy_mode: EnergyMode,
    cfg: &PpoConfig,
    seed: u64,
    sink: Option<Box<dyn Write + Send>>,
) -> Result<RunOutcome> {
    let mut env = env_id.make(energy_mode);
    let spec = env.spec().clone();
    let mut agent = PpoAgent::new(&spec, cfg.clone(), seed)?;
    let mut log = match sink {
        Some(w) => MetricsLog::with_sink(w)?,
        None => MetricsLog::new(),
    };
    let mut reset_rng = stream(seed, Stream::EnvReset);
    let mut explore_rng = stream(seed, Stream::Exploration);
    let evals = EvalContext {
        env_id,
        energy_mode,
        seeds: eval_seeds(seed, cfg.eval_episodes),
        every: cfg.eval_every,
        total: cfg.total_steps,
    };

    let mut buffer = RolloutBuffer::default();
    let mut trace = Vec::new();
    let mut latest = LatestStats::default();
    let mut episode = EpisodeTracker::default();
    let (mut best, mut final_eval, mut failure) = (None, None, None);
    let mut steps_done = 0;
    let mut obs = env.reset(reset_rng.random());

    'outer: for step in 1..=cfg.total_steps {
        let o = Tensor::new(vec![1, spec.obs_dim], obs.clone())?;
        let sample = agent.models.policy.sample(&o, &mut explore_rng)?;
        let (value_task, value_energy) = agent.values(&obs)?;
        let res = match env.step(sample.action.data()) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        episode.add(res.reward.task, res.reward.energy);
        let (bootstrap_task, bootstrap_energy) = if res.truncated && !res.terminated {
            agent.values(&res.next_obs)?
        } else {
            (0.0, 0.0)
        };
        buffer.push(RolloutStep {
            state: std::mem::take(&mut obs),
            raw_action: sample.raw.into_data(),
            action: sample.action.into_data(),
            log_prob_old: sample.log_prob[0],
            reward_task: res.reward.task,
            reward_energy: res.reward.energy,
            value_task,
            value_energy,
            terminated: res.terminated,
            truncated: res.truncated,
            bootstrap_task,
            bootstrap_energy,
        })?;
        obs = res.next_obs;
        steps_done = step;

        let mut row = MetricsRow::new(step);
        if res.terminated || res.truncated {
            let (ret, energy) = episode.finish();
            row.episode_return_task = Some(ret);
            row.episode_energy_sum = Some(energy);
            obs = env.reset(reset_rng.random());
        }

        if buffer.len() == cfg.rollout_len {
            let (lt, le) = agent.values(&obs)?;
            buffer.compute_advantages(lt, le, cfg.gamma, cfg.gae_lambda)?;
            match ppo_update(&mut agent.models, &buffer, cfg, &mut agent.minibatch_rng) {
                Ok(stats) => {
                    latest.critic_loss_task = Some(stats.value_loss_task);
                    latest.critic_loss_energy = Some(stats.value_loss_energy);
                    latest.actor_loss_task = Some(stats.policy_loss_task);
                    latest.actor_loss_energy = stats.policy_loss_energy;
                    if let Some(&d) = stats.trace.last() {
                        latest.diagnostics = Some(d);
                    }
                    trace.extend(stats.trace);
                }
                Err(e) => {
                    failure = Some(format!("update at step {step}: {e}"));
                    push_if_any(&mut log, row)?;
                    break 'outer;
                }
            }
            buffer.clear();
        }

        if row.episode_return_task.is_some() {
            latest.fill(&mut row);
        }
        if evals.due(step) {
            latest.fill(&mut row);
            evals.run(step, &agent.models.policy, &mut row, &mut best, &mut final_eval)?;
        }
        push_if_any(&mut log, row)?;
    }

    Ok(RunOutcome {
        log,
        trace,
        networks: vec![
            ("v_task".into(), agent.models.v_task.params().clone()),
            ("v_energy".into(), agent.models.v_energy.params().clone()),
        ],
        policy: agent.models.policy,
        final_eval,
        best,
        steps_done,
        clamped_actions: env.clamped_actions(),
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combine::Combiner;

    fn tiny(combiner: Combiner) -> PpoConfig {
        PpoConfig {
            hidden: vec![8],
            rollout_len: 128,
            minibatch_size: 32,
            epochs: 2,
            total_steps: 450,
            eval_every: 400,
            eval_episodes: 2,
            combiner,
            ..PpoConfig::default()
        }
    }

    #[test]
    fn runs_are_reproducible_and_log_diagnostics() {
        let a = train(EnvId::Pointmass, EnergyMode::AbsTorque, &tiny(Combiner::PeGrad), 2, None).unwrap();
        let b = train(EnvId::Pointmass, EnergyMode::AbsTorque, &tiny(Combiner::PeGrad), 2, None).unwrap();
        assert_eq!(a.log.to_csv_string().unwrap(), b.log.to_csv_string().unwrap());
        assert!(a.failure.is_none());
        // 3 full rollouts x 2 epochs x 4 minibatches
        assert_eq!(a.trace.len(), 24);
        let steps: Vec<u64> = a.log.rows().iter().map(|r| r.global_step).collect();
        assert_eq!(steps, vec![200, 400, 450]);
        assert!(a.log.rows()[0].beta_scale.is_some());
    }
}
