use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a rollout step ends, as seen by the advantage recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    /// The next step continues the same episode.
    Continue,
    /// True terminal state: no bootstrap.
    Terminated,
    /// Horizon cut: bootstrap from the value of the final observation.
    Truncated(f64),
}

/// Generalised advantage estimation.
///
/// `delta_t = r_t + gamma V_next - V_t`, where `V_next` is `values[t + 1]`
/// (or `last_value` at the end of the array) inside an episode, 0 after a
/// terminal step and the stored bootstrap value after a truncation.
/// `A_t = delta_t + gamma lambda A_{t+1}`, with the carry cut at every
/// episode boundary.
pub fn gae(rewards: &[f64], values: &[f64], last_value: f64, flags: &[Boundary], gamma: f64, gae_lambda: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n || flags.len() != n {
        return Err(Error::LengthMismatch {
            what: "gae inputs",
            expected: n,
            got: if values.len() != n { values.len() } else { flags.len() },
        });
    }
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, cont) = match flags[t] {
            Boundary::Continue => (if t + 1 < n { values[t + 1] } else { last_value }, 1.0),
            Boundary::Terminated => (0.0, 0.0),
            Boundary::Truncated(v) => (v, 0.0),
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        carry = delta + gamma * gae_lambda * cont * carry;
        adv[t] = carry;
    }
    Ok(adv)
}

/// `A^r - lambda A^e`, elementwise.
pub fn scalarized_advantage(adv_task: &[f64], adv_energy: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if adv_task.len() != adv_energy.len() {
        return Err(Error::LengthMismatch {
            what: "advantages",
            expected: adv_task.len(),
            got: adv_energy.len(),
        });
    }
    Ok(adv_task.iter().zip(adv_energy).map(|(r, e)| r - lambda * e).collect())
}

/// Zero mean, unit (population) variance; a constant array maps to zeros.
pub fn normalize(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 2.0];
        let a = gae(&r, &v, 4.0, &[Boundary::Continue; 3], 0.9, 0.0).unwrap();
        assert_eq!(a, vec![1.0 + 0.9 * -0.5 - 0.5, 2.0 + 0.9 * 2.0 + 0.5, 3.0 + 0.9 * 4.0 - 2.0]);
    }

    #[test]
    fn gamma_zero_is_reward_minus_value() {
        let a = gae(&[1.0, 2.0], &[0.25, 4.0], 9.0, &[Boundary::Continue; 2], 0.0, 0.95).unwrap();
        assert_eq!(a, vec![0.75, -2.0]);
    }

    #[test]
    fn boundaries_cut_the_carry() {
        let flags = [Boundary::Terminated, Boundary::Truncated(10.0), Boundary::Continue];
        let a = gae(&[1.0, 1.0, 1.0], &[0.0; 3], 0.0, &flags, 0.5, 1.0).unwrap();
        assert_eq!(a, vec![1.0, 1.0 + 0.5 * 10.0, 1.0]);
    }

    #[test]
    fn scalarization_and_normalization() {
        assert_eq!(scalarized_advantage(&[1.0, 2.0], &[3.0, 4.0], 0.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(scalarized_advantage(&[0.5, 1.0], &[5.0, 10.0], 0.1).unwrap(), vec![0.0, 0.0]);
        assert!(scalarized_advantage(&[1.0], &[], 0.1).is_err());
        assert_eq!(normalize(&[3.0, 3.0]), vec![0.0, 0.0]);
        let z = normalize(&[1.0, 2.0, 3.0, 6.0]);
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
        assert!((z.iter().map(|x| x * x).sum::<f64>() / 4.0 - 1.0).abs() < 1e-7);
    }
}
