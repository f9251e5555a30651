use rand::Rng;

use super::{clamp_action, EnergyMode, Env, EnvSpec, StepResult, VectorReward};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Torque-limited inverted pendulum swing-up.
///
/// `theta = 0` is upright. With point mass `m` on a massless rod of length `l`:
/// `theta_dd = (g / l) sin(theta) + tau / (m l^2)`, integrated with
/// semi-implicit Euler. Observation `(cos theta, sin theta, theta_dot)`.
/// Task reward on the post-step state: `-(wrap(theta)^2 + 0.1 theta_dot^2)`.
#[derive(Debug, Clone)]
pub struct PendulumSwingup {
    spec: EnvSpec,
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    theta: f64,
    theta_dot: f64,
    t: usize,
    clamped: u64,
}

pub const MAX_TORQUE: f64 = 2.0;

impl PendulumSwingup {
    pub fn new(energy_mode: EnergyMode) -> Self {
        Self {
            spec: EnvSpec {
                obs_dim: 3,
                act_dim: 1,
                low: vec![-MAX_TORQUE],
                high: vec![MAX_TORQUE],
                dt: 0.05,
                horizon: 200,
                energy_mode,
            },
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            theta: 0.0,
            theta_dot: 0.0,
            t: 0,
            clamped: 0,
        }
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

/// Angle wrapped into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Env for PendulumSwingup {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        use std::f64::consts::PI;
        let mut rng = seeded(seed);
        self.theta = rng.random_range(-PI..=PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.t = 0;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let (a, clamped) = clamp_action(&self.spec, action)?;
        self.clamped += clamped as u64;
        let tau = a[0];
        let dt = self.spec.dt;
        let acc = self.gravity / self.length * self.theta.sin() + tau / (self.mass * self.length * self.length);
        self.theta_dot += acc * dt;
        self.theta += self.theta_dot * dt;
        if !self.theta.is_finite() || !self.theta_dot.is_finite() {
            return Err(Error::Diverged {
                step: self.t,
                reason: "pendulum state is not finite".into(),
            });
        }
        let th = wrap_angle(self.theta);
        let task = -(th * th + 0.1 * self.theta_dot * self.theta_dot);
        let energy = self.spec.energy_mode.energy(&[tau], &[self.theta_dot]);
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
    use std::f64::consts::PI;

    #[test]
    fn reset_is_deterministic_and_in_range() {
        let mut env = PendulumSwingup::new(EnergyMode::AbsTorque);
        for seed in 0..200 {
            let a = env.reset(seed);
            let (th, thd) = env.state();
            assert!((-PI..=PI).contains(&th));
            assert!((-1.0..=1.0).contains(&thd));
            assert_eq!(env.reset(seed), a);
        }
    }

    #[test]
    fn upright_is_a_fixed_point_with_max_reward() {
        let mut env = PendulumSwingup::new(EnergyMode::AbsTorque);
        env.reset(0);
        env.set_state(0.0, 0.0);
        let r = env.step(&[0.0]).unwrap();
        assert_eq!(env.state(), (0.0, 0.0));
        assert_eq!(r.reward.task, 0.0);
        assert_eq!(r.reward.energy, 0.0);
        assert_eq!(r.next_obs, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn semi_implicit_euler_update() {
        let mut env = PendulumSwingup::new(EnergyMode::AbsTorque);
        env.set_state(0.3, -0.2);
        env.step(&[1.5]).unwrap();
        let thd = -0.2 + (9.81 * 0.3f64.sin() + 1.5) * 0.05;
        let th = 0.3 + thd * 0.05;
        assert_eq!(env.state(), (th, thd));
    }

    #[test]
    fn mech_power_bounded_by_abs_torque_times_speed() {
        let mut abs = PendulumSwingup::new(EnergyMode::AbsTorque);
        let mut mech = PendulumSwingup::new(EnergyMode::MechPower);
        abs.reset(7);
        mech.reset(7);
        let mut rng = seeded(9);
        let mut pairs = Vec::new();
        let mut max_speed = 0.0f64;
        for _ in 0..200 {
            let a = [rng.random_range(-2.0..2.0)];
            let (ra, rm) = (abs.step(&a).unwrap(), mech.step(&a).unwrap());
            max_speed = max_speed.max(mech.state().1.abs());
            pairs.push((ra.reward.energy, rm.reward.energy));
        }
        for (e_abs, e_mech) in pairs {
            assert!(e_mech <= e_abs * max_speed + 1e-12);
        }
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
