use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward_task: f64,
    pub reward_energy: f64,
    pub next_state: Vec<f64>,
    pub terminated: bool,
}

/// A minibatch in row-major tensor form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Tensor,
    pub act: Tensor,
    pub reward_task: Vec<f64>,
    pub reward_energy: Vec<f64>,
    pub next_obs: Tensor,
    pub terminated: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.reward_task.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward_task.is_empty()
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let rows = |f: fn(&Transition) -> &Vec<f64>| Tensor::from_rows(&ts.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            obs: rows(|t| &t.state)?,
            act: rows(|t| &t.action)?,
            reward_task: ts.iter().map(|t| t.reward_task).collect(),
            reward_energy: ts.iter().map(|t| t.reward_energy).collect(),
            next_obs: rows(|t| &t.next_state)?,
            terminated: ts.iter().map(|t| t.terminated).collect(),
        })
    }
}

/// Fixed-capacity ring buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    act: Vec<f64>,
    reward_task: Vec<f64>,
    reward_energy: Vec<f64>,
    next_obs: Vec<f64>,
    terminated: Vec<bool>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            act: Vec::new(),
            reward_task: Vec::new(),
            reward_energy: Vec::new(),
            next_obs: Vec::new(),
            terminated: Vec::new(),
            len: 0,
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::LengthMismatch { what, expected, got })
            }
        };
        check("transition state", self.obs_dim, t.state.len())?;
        check("transition next_state", self.obs_dim, t.next_state.len())?;
        check("transition action", self.act_dim, t.action.len())?;
        if !(t.reward_energy >= 0.0) || !t.reward_task.is_finite() || !t.reward_energy.is_finite() {
            return Err(Error::InvalidArgument("transition rewards must be finite with energy >= 0".into()));
        }
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.state);
            self.act.extend_from_slice(&t.action);
            self.reward_task.push(t.reward_task);
            self.reward_energy.push(t.reward_energy);
            self.next_obs.extend_from_slice(&t.next_state);
            self.terminated.push(t.terminated);
            self.len += 1;
        } else {
            let i = self.head;
            self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.state);
            self.act[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(&t.action);
            self.reward_task[i] = t.reward_task;
            self.reward_energy[i] = t.reward_energy;
            self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_state);
            self.terminated[i] = t.terminated;
        }
        self.head = (self.head + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.len).then(|| Transition {
            state: self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            action: self.act[i * self.act_dim..(i + 1) * self.act_dim].to_vec(),
            reward_task: self.reward_task[i],
            reward_energy: self.reward_energy[i],
            next_state: self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            terminated: self.terminated[i],
        })
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len < n || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {n} transitions from a buffer holding {}",
                self.len
            )));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn gather(&self, idx: &[usize]) -> Result<Batch> {
        let rows = |src: &[f64], dim: usize| {
            let mut data = Vec::with_capacity(idx.len() * dim);
            for &i in idx {
                data.extend_from_slice(&src[i * dim..(i + 1) * dim]);
            }
            Tensor::new(vec![idx.len(), dim], data)
        };
        if idx.iter().any(|&i| i >= self.len) {
            return Err(Error::InvalidArgument("replay index out of range".into()));
        }
        Ok(Batch {
            obs: rows(&self.obs, self.obs_dim)?,
            act: rows(&self.act, self.act_dim)?,
            reward_task: idx.iter().map(|&i| self.reward_task[i]).collect(),
            reward_energy: idx.iter().map(|&i| self.reward_energy[i]).collect(),
            next_obs: rows(&self.next_obs, self.obs_dim)?,
            terminated: idx.iter().map(|&i| self.terminated[i]).collect(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        self.gather(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tr(i: usize) -> Transition {
        Transition {
            state: vec![i as f64],
            action: vec![-(i as f64)],
            reward_task: i as f64,
            reward_energy: 0.5,
            next_state: vec![i as f64 + 1.0],
            terminated: i.is_multiple_of(2),
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 1, 1).unwrap();
        for i in 0..5 {
            b.push(&tr(i)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().reward_task).collect();
        assert_eq!(rewards, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn rejects_bad_transitions_and_small_samples() {
        let mut b = ReplayBuffer::new(10, 1, 1).unwrap();
        let mut t = tr(0);
        t.reward_energy = -1.0;
        assert!(b.push(&t).is_err());
        t.state = vec![0.0, 1.0];
        assert!(b.push(&t).is_err());
        b.push(&tr(1)).unwrap();
        assert!(b.sample(2, &mut seeded(0)).is_err());
    }

    #[test]
    fn gather_matches_get() {
        let mut b = ReplayBuffer::new(10, 1, 1).unwrap();
        for i in 0..10 {
            b.push(&tr(i)).unwrap();
        }
        let batch = b.gather(&[7, 2, 7]).unwrap();
        let expect = Batch::from_transitions(&[tr(7), tr(2), tr(7)]).unwrap();
        assert_eq!(batch, expect);
    }

    #[test]
    fn sampling_is_uniform() {
        // Pearson chi-square over 10^6 draws from 100 slots; the 0.999
        // quantile of chi2(99) is about 148.2.
        let n_slots = 100;
        let mut b = ReplayBuffer::new(n_slots, 1, 1).unwrap();
        for i in 0..n_slots {
            b.push(&tr(i)).unwrap();
        }
        let draws = 1_000_000;
        let mut counts = vec![0u64; n_slots];
        let mut rng = seeded(42);
        for _ in 0..draws / n_slots {
            for i in b.sample_indices(n_slots, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 / n_slots as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 148.2, "chi2 = {chi2}");
        assert!(chi2 > 0.0);
    }
}
