use serde::{Deserialize, Serialize};

use super::{EnergyMode, Env, EnvSpec, StepResult, VectorReward};
use crate::error::{Error, Result};

/// `q[s][a]`.
pub type QTable = Vec<Vec<f64>>;

/// Finite deterministic MDP with separate task and energy tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub next: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl TabularMdp {
    /// Three-state chain. Action 1 ("high effort") advances one state and
    /// pays more task reward and more energy; action 0 ("low effort") slides
    /// back one state. Task-optimal: always advance. Energy-optimal: never.
    pub fn chain3() -> Self {
        Self {
            n_states: 3,
            n_actions: 2,
            next: vec![vec![0, 1], vec![0, 2], vec![1, 2]],
            reward: vec![vec![0.0, 0.1], vec![0.0, 0.2], vec![0.5, 1.0]],
            energy: vec![vec![0.1, 1.0], vec![0.1, 1.0], vec![0.1, 1.0]],
            gamma: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shaped = |t: &Vec<Vec<f64>>| t.len() == self.n_states && t.iter().all(|r| r.len() == self.n_actions);
        if self.next.len() != self.n_states || self.next.iter().any(|r| r.len() != self.n_actions) {
            return Err(Error::InvalidArgument("transition table shape".into()));
        }
        if self.next.iter().flatten().any(|&s| s >= self.n_states) {
            return Err(Error::InvalidArgument("transition to an invalid state".into()));
        }
        if !shaped(&self.reward) || !shaped(&self.energy) {
            return Err(Error::InvalidArgument("reward/energy table shape".into()));
        }
        if self.energy.iter().flatten().any(|&e| e < 0.0) {
            return Err(Error::InvalidArgument("energy must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn sup_diff(a: &QTable, b: &QTable) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Iterates a Bellman operator until the sup-norm change guarantees the
/// iterate is within `tol` of the fixed point (contraction bound).
fn iterate(mdp: &TabularMdp, tol: f64, table: &[Vec<f64>], backup: impl Fn(&QTable, usize) -> f64) -> QTable {
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let threshold = if mdp.gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - mdp.gamma) / mdp.gamma };
    loop {
        let next: QTable = (0..mdp.n_states)
            .map(|s| {
                (0..mdp.n_actions)
                    .map(|a| table[s][a] + mdp.gamma * backup(&q, mdp.next[s][a]))
                    .collect()
            })
            .collect();
        let delta = sup_diff(&next, &q);
        q = next;
        if delta <= threshold {
            return q;
        }
    }
}

/// Optimal action values per channel, computed independently: the task
/// table maximises discounted task reward, the energy table minimises
/// discounted energy.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<(QTable, QTable)> {
    mdp.validate()?;
    let max = |q: &QTable, s: usize| q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |q: &QTable, s: usize| q[s].iter().copied().fold(f64::INFINITY, f64::min);
    Ok((iterate(mdp, tol, &mdp.reward, max), iterate(mdp, tol, &mdp.energy, min)))
}

/// Soft action values of a fixed stochastic policy `pi[s][a]`, per channel:
/// `Q(s,a) = r(s,a) + gamma * sum_a' pi(a'|s') (Q(s',a') - alpha ln pi(a'|s'))`.
/// Both channels carry the entropy term, as the SAC critics do.
pub fn policy_evaluation(mdp: &TabularMdp, pi: &[Vec<f64>], alpha: f64, tol: f64) -> Result<(QTable, QTable)> {
    mdp.validate()?;
    if pi.len() != mdp.n_states || pi.iter().any(|r| r.len() != mdp.n_actions) {
        return Err(Error::InvalidArgument("policy table shape".into()));
    }
    if pi.iter().any(|r| (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 || r.iter().any(|&p| p < 0.0)) {
        return Err(Error::InvalidArgument("policy rows must be distributions".into()));
    }
    let soft = |q: &QTable, s: usize| {
        pi[s]
            .iter()
            .zip(&q[s])
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, qv)| p * (qv - alpha * p.ln()))
            .sum::<f64>()
    };
    Ok((iterate(mdp, tol, &mdp.reward, soft), iterate(mdp, tol, &mdp.energy, soft)))
}

/// [`TabularMdp`] exposed as a continuous-control environment: observation is
/// the one-hot state, the single action coordinate in `[-1, 1]` selects
/// action 1 when positive and action 0 otherwise. Episodes start in state 0.
#[derive(Debug, Clone)]
pub struct ChainEnv {
    spec: EnvSpec,
    mdp: TabularMdp,
    state: usize,
    t: usize,
    clamped: u64,
}

impl ChainEnv {
    pub const HORIZON: usize = 20;

    pub fn new(mdp: TabularMdp) -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: mdp.n_states,
                act_dim: 1,
                low: vec![-1.0],
                high: vec![1.0],
                dt: 1.0,
                horizon: Self::HORIZON,
                energy_mode: EnergyMode::AbsTorque,
            },
            mdp,
            state: 0,
            t: 0,
            clamped: 0,
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states];
        v[s] = 1.0;
        v
    }

    pub fn discrete_action(a: f64) -> usize {
        usize::from(a > 0.0)
    }
}

impl Env for ChainEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.state = 0;
        self.t = 0;
        self.one_hot(0)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let (a, clamped) = super::clamp_action(&self.spec, action)?;
        self.clamped += clamped as u64;
        let a = Self::discrete_action(a[0]);
        let s = self.state;
        let reward = VectorReward {
            task: self.mdp.reward[s][a],
            energy: self.mdp.energy[s][a],
        };
        self.state = self.mdp.next[s][a];
        let truncated = self.t + 1 >= self.spec.horizon;
        self.t += 1;
        Ok(StepResult {
            next_obs: self.one_hot(self.state),
            reward,
            terminated: false,
            truncated,
        })
    }

    fn clamped_actions(&self) -> u64 {
        self.clamped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp {
            n_states: 1,
            n_actions: 1,
            next: vec![vec![0]],
            reward: vec![vec![r]],
            energy: vec![vec![0.0]],
            gamma,
        }
    }

    #[test]
    fn geometric_series() {
        let (qt, qe) = value_iteration(&single(1.0, 0.9), 1e-10).unwrap();
        assert!((qt[0][0] - 10.0).abs() <= 1e-10);
        assert_eq!(qe[0][0], 0.0);
    }

    #[test]
    fn all_zero_rewards() {
        let mut mdp = TabularMdp::chain3();
        mdp.reward.iter_mut().flatten().for_each(|r| *r = 0.0);
        mdp.energy.iter_mut().flatten().for_each(|r| *r = 0.0);
        let (qt, qe) = value_iteration(&mdp, 1e-12).unwrap();
        assert!(qt.iter().chain(&qe).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn chain_objectives_conflict() {
        let (qt, qe) = value_iteration(&TabularMdp::chain3(), 1e-10).unwrap();
        for s in 0..3 {
            assert!(qt[s][1] > qt[s][0], "task prefers high effort in {s}");
            assert!(qe[s][0] < qe[s][1], "energy prefers low effort in {s}");
        }
        // staying in the goal state with high effort forever: 1 / (1 - 0.9)
        assert!((qt[2][1] - 10.0).abs() < 1e-9);
        // low effort forever costs 0.1 / (1 - 0.9)
        assert!((qe[0][0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn soft_evaluation_matches_linear_solve_on_single_state() {
        // one state, two actions, pi = (0.25, 0.75), self-loop:
        // V = sum_a pi_a (r_a - alpha ln pi_a) / (1 - gamma); Q_a = r_a + gamma V
        let mdp = TabularMdp {
            n_states: 1,
            n_actions: 2,
            next: vec![vec![0, 0]],
            reward: vec![vec![1.0, 2.0]],
            energy: vec![vec![0.5, 0.0]],
            gamma: 0.8,
        };
        let pi = vec![vec![0.25, 0.75]];
        let alpha = 0.2;
        let (qt, qe) = policy_evaluation(&mdp, &pi, alpha, 1e-12).unwrap();
        let h: f64 = -alpha * (0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        let vt = (0.25 * 1.0 + 0.75 * 2.0 + h) / (1.0 - 0.8);
        let ve = (0.25 * 0.5 + h) / (1.0 - 0.8);
        assert!((qt[0][0] - (1.0 + 0.8 * vt)).abs() < 1e-10);
        assert!((qt[0][1] - (2.0 + 0.8 * vt)).abs() < 1e-10);
        assert!((qe[0][0] - (0.5 + 0.8 * ve)).abs() < 1e-10);
    }

    #[test]
    fn validation() {
        let mut mdp = TabularMdp::chain3();
        mdp.next[0][0] = 3;
        assert!(mdp.validate().is_err());
        let mut mdp = TabularMdp::chain3();
        mdp.gamma = 1.0;
        assert!(value_iteration(&mdp, 1e-6).is_err());
        assert!(policy_evaluation(&TabularMdp::chain3(), &vec![vec![0.5, 0.6]; 3], 0.0, 1e-6).is_err());
    }

    #[test]
    fn env_follows_tables() {
        let mut env = ChainEnv::new(TabularMdp::chain3());
        assert_eq!(env.reset(123), vec![1.0, 0.0, 0.0]);
        let r = env.step(&[0.7]).unwrap();
        assert_eq!(r.next_obs, vec![0.0, 1.0, 0.0]);
        assert_eq!(r.reward, VectorReward { task: 0.1, energy: 1.0 });
        let r = env.step(&[-0.2]).unwrap();
        assert_eq!(env.state(), 0);
        assert_eq!(r.reward, VectorReward { task: 0.0, energy: 0.1 });
    }
}
