use std::io::Write;

use rand::Rng as _;

use super::{ReplayBuffer, SacAgent, SacConfig, Transition};
use crate::autodiff::Tensor;
use crate::envs::{EnergyMode, EnvId};
use crate::error::Result;
use crate::metrics::{MetricsLog, MetricsRow};
use crate::rng::{stream, Stream};
use crate::runner::{eval_seeds, push_if_any, EpisodeTracker, EvalContext, LatestStats, RunOutcome};

/// Trains a multi-objective SAC agent. Metrics are streamed to `sink` (if
/// any) as they are produced.
pub fn train(
    env_id: EnvId,
    energy_mode: EnergyMode,
    cfg: &SacConfig,
    seed: u64,
    sink: Option<Box<dyn Write + Send>>,
) -> Result<RunOutcome> {
    let spec = env_id.make(energy_mode).spec().clone();
    let agent = SacAgent::new(&spec, cfg.clone(), seed)?;
    train_agent(agent, env_id, energy_mode, seed, sink)
}

/// Training loop for a prepared agent. The first `warmup_steps` actions are
/// uniform over the action box and no update happens until warmup is over.
/// Afterwards, every environment step is followed by one [`SacAgent::update`].
pub fn train_agent(
    mut agent: SacAgent,
    env_id: EnvId,
    energy_mode: EnergyMode,
    seed: u64,
    sink: Option<Box<dyn Write + Send>>,
) -> Result<RunOutcome> {
    let cfg = agent.cfg.clone();
    let mut env = env_id.make(energy_mode);
    let spec = env.spec().clone();
    let mut log = match sink {
        Some(w) => MetricsLog::with_sink(w)?,
        None => MetricsLog::new(),
    };
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, spec.obs_dim, spec.act_dim)?;
    let mut reset_rng = stream(seed, Stream::EnvReset);
    let mut explore_rng = stream(seed, Stream::Exploration);
    let evals = EvalContext {
        env_id,
        energy_mode,
        seeds: eval_seeds(seed, cfg.eval_episodes),
        every: cfg.eval_every,
        total: cfg.total_steps,
    };

    let mut trace = Vec::new();
    let mut latest = LatestStats::default();
    let mut episode = EpisodeTracker::default();
    let (mut best, mut final_eval, mut failure) = (None, None, None);
    let mut steps_done = 0;
    let mut obs = env.reset(reset_rng.random());

    for step in 1..=cfg.total_steps {
        let action = if step <= cfg.warmup_steps {
            spec.low
                .iter()
                .zip(&spec.high)
                .map(|(&lo, &hi)| explore_rng.random_range(lo..hi))
                .collect::<Vec<_>>()
        } else {
            let o = Tensor::new(vec![1, spec.obs_dim], obs.clone())?;
            agent.policy.sample(&o, &mut explore_rng)?.action.into_data()
        };
        let res = match env.step(&action) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        buffer.push(&Transition {
            state: std::mem::take(&mut obs),
            action,
            reward_task: res.reward.task,
            reward_energy: res.reward.energy,
            next_state: res.next_obs.clone(),
            terminated: res.terminated,
        })?;
        episode.add(res.reward.task, res.reward.energy);
        obs = res.next_obs;

        if step > cfg.warmup_steps && buffer.len() >= cfg.batch_size {
            match agent.update(&buffer) {
                Ok(report) => {
                    if report.critic_loss_task.is_some() {
                        latest.critic_loss_task = report.critic_loss_task;
                        latest.critic_loss_energy = report.critic_loss_energy;
                    }
                    if let Some(a) = report.actor {
                        latest.actor_loss_task = Some(a.loss_task);
                        latest.actor_loss_energy = a.loss_energy;
                        if let Some(d) = a.diagnostics {
                            latest.diagnostics = Some(d);
                            trace.push(d);
                        }
                    }
                }
                Err(e) => {
                    failure = Some(format!("update at step {step}: {e}"));
                    break;
                }
            }
        }
        steps_done = step;

        let mut row = MetricsRow::new(step);
        if res.terminated || res.truncated {
            let (ret, energy) = episode.finish();
            row.episode_return_task = Some(ret);
            row.episode_energy_sum = Some(energy);
            latest.fill(&mut row);
            obs = env.reset(reset_rng.random());
        }
        if evals.due(step) {
            latest.fill(&mut row);
            evals.run(step, &agent.policy, &mut row, &mut best, &mut final_eval)?;
        }
        push_if_any(&mut log, row)?;
    }

    Ok(RunOutcome {
        log,
        trace,
        networks: agent.networks(),
        policy: agent.policy,
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

    fn tiny(combiner: Combiner) -> SacConfig {
        SacConfig {
            hidden: vec![8],
            batch_size: 16,
            warmup_steps: 50,
            total_steps: 300,
            eval_every: 200,
            eval_episodes: 2,
            combiner,
            ..SacConfig::default()
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let a = train(EnvId::Pendulum, EnergyMode::AbsTorque, &tiny(Combiner::PeGrad), 4, None).unwrap();
        let b = train(EnvId::Pendulum, EnergyMode::AbsTorque, &tiny(Combiner::PeGrad), 4, None).unwrap();
        assert_eq!(a.log.to_csv_string().unwrap(), b.log.to_csv_string().unwrap());
        assert!(a.failure.is_none());
        assert_eq!(a.steps_done, 300);
        // episodes end at 200; evals at 200 and the final step
        let steps: Vec<u64> = a.log.rows().iter().map(|r| r.global_step).collect();
        assert_eq!(steps, vec![200, 300]);
        assert!(a.log.rows()[0].is_eval() && a.log.rows()[0].episode_return_task.is_some());
        // one actor update every second step after warmup
        assert_eq!(a.trace.len(), 125);
    }

    #[test]
    fn warmup_only_run_never_updates() {
        let mut cfg = tiny(Combiner::PeGrad);
        cfg.warmup_steps = 300;
        let out = train(EnvId::Pointmass, EnergyMode::AbsTorque, &cfg, 0, None).unwrap();
        assert!(out.trace.is_empty());
        let spec = EnvId::Pointmass.make(EnergyMode::AbsTorque).spec().clone();
        let fresh = SacAgent::new(&spec, cfg, 0).unwrap();
        assert_eq!(out.policy.params(), fresh.policy.params());
    }
}
