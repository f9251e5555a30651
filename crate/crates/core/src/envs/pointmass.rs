use rand::Rng;

use super::{clamp_action, EnergyMode, Env, EnvSpec, StepResult, VectorReward};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Planar double integrator that must reach and hold a goal.
///
/// `vel' = 0.95 vel + force dt`, `pos' = pos + vel' dt` (unit mass).
/// Observation `(pos, vel, goal - pos)`. Task reward
/// `-|pos' - goal| + 1` while within [`GOAL_RADIUS`] of the goal.
#[derive(Debug, Clone)]
pub struct PointMassReach {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    t: usize,
    clamped: u64,
}

pub const DAMPING: f64 = 0.95;
pub const GOAL_RADIUS: f64 = 0.05;
pub const GOAL_BONUS: f64 = 1.0;

impl PointMassReach {
    pub fn new(energy_mode: EnergyMode) -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 6,
                act_dim: 2,
                low: vec![-1.0, -1.0],
                high: vec![1.0, 1.0],
                dt: 0.05,
                horizon: 200,
                energy_mode,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            t: 0,
            clamped: 0,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
    }

    pub fn state(&self) -> ([f64; 2], [f64; 2], [f64; 2]) {
        (self.pos, self.vel, self.goal)
    }

    fn obs(&self) -> Vec<f64> {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            self.goal[0] - self.pos[0],
            self.goal[1] - self.pos[1],
        ]
    }
}

impl Env for PointMassReach {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        for i in 0..2 {
            self.pos[i] = rng.random_range(-1.0..=1.0);
        }
        for i in 0..2 {
            self.goal[i] = rng.random_range(-1.0..=1.0);
        }
        self.vel = [0.0; 2];
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let (force, clamped) = clamp_action(&self.spec, action)?;
        self.clamped += clamped as u64;
        let dt = self.spec.dt;
        for i in 0..2 {
            self.vel[i] = DAMPING * self.vel[i] + force[i] * dt;
            self.pos[i] += self.vel[i] * dt;
        }
        if self.pos.iter().chain(&self.vel).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: self.t,
                reason: "point-mass state is not finite".into(),
            });
        }
        let dist = ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt();
        let task = -dist + if dist < GOAL_RADIUS { GOAL_BONUS } else { 0.0 };
        let energy = self.spec.energy_mode.energy(&force, &self.vel);
        let truncated = self.t + 1 >= self.spec.horizon;
        self.t += 1;
        Ok(StepResult {
            next_obs: self.obs(),
            reward: VectorReward { task, energy },
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

    #[test]
    fn reset_ranges_and_determinism() {
        let mut env = PointMassReach::new(EnergyMode::AbsTorque);
        for seed in 0..100 {
            let obs = env.reset(seed);
            let (p, v, g) = env.state();
            assert!(p.iter().chain(&g).all(|x| (-1.0..=1.0).contains(x)));
            assert_eq!(v, [0.0, 0.0]);
            assert_eq!(env.reset(seed), obs);
        }
    }

    #[test]
    fn energy_is_summed_absolute_force() {
        let mut env = PointMassReach::new(EnergyMode::AbsTorque);
        env.reset(1);
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward.energy, 0.0);
        assert_eq!(env.step(&[0.5, -0.5]).unwrap().reward.energy, 1.0);
    }

    #[test]
    fn bonus_inside_goal_radius() {
        let mut env = PointMassReach::new(EnergyMode::AbsTorque);
        env.set_state([0.0, 0.0], [0.0, 0.0], [0.01, 0.0]);
        let r = env.step(&[0.0, 0.0]).unwrap();
        assert!((r.reward.task - (1.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn zero_force_from_rest_stays_put() {
        let mut env = PointMassReach::new(EnergyMode::AbsTorque);
        let obs = env.reset(4);
        for _ in 0..50 {
            let r = env.step(&[0.0, 0.0]).unwrap();
            assert_eq!(r.next_obs, obs);
        }
    }
}
