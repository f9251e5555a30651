use rand::Rng;
use rand_distr::StandardNormal;

use super::{bind_all, dense, push_dense, Bind, MlpSpec};
use crate::autodiff::{softplus, Graph, ParamVector, Tensor, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Tanh-squashed diagonal Gaussian policy.
///
/// The trunk is an MLP with activations after every hidden layer; two linear
/// heads produce the pre-squash mean and an unconstrained log-std that is
/// mapped smoothly into `[LOG_STD_MIN, LOG_STD_MAX]`. Actions are
/// `bias + scale * tanh(u)` with `u = mean + std * noise`.
///
/// Parameter layout: `trunk.{i}.weight`, `trunk.{i}.bias`, then `mean.*`, then
/// `log_std.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedGaussianPolicy {
    spec: MlpSpec,
    params: ParamVector,
    scale: Vec<f64>,
    bias: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
}

/// One batch of actions drawn from the policy outside any training graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Squashed actions, strictly inside the action bounds.
    pub action: Tensor,
    /// Pre-squash Gaussian sample `u`.
    pub raw: Tensor,
    /// Standard-normal noise used to produce `raw`.
    pub noise: Tensor,
    pub log_prob: Vec<f64>,
}

impl SquashedGaussianPolicy {
    /// `spec.output_dim` is the action dimension.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, low: &[f64], high: &[f64], rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamVector::empty();
        let mut prev = spec.input_dim;
        for (i, &h) in spec.hidden.iter().enumerate() {
            push_dense(&mut params, &format!("trunk.{i}"), prev, h, rng);
            prev = h;
        }
        push_dense(&mut params, "mean", prev, spec.output_dim, rng);
        push_dense(&mut params, "log_std", prev, spec.output_dim, rng);
        Self::assemble(spec, params, low, high)
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector, low: &[f64], high: &[f64]) -> Result<Self> {
        let reference = Self::new(spec.clone(), low, high, &mut crate::rng::seeded(0))?;
        reference.params.check_layout(&params)?;
        Self::assemble(spec, params, low, high)
    }

    fn assemble(spec: MlpSpec, params: ParamVector, low: &[f64], high: &[f64]) -> Result<Self> {
        if low.len() != spec.output_dim || high.len() != spec.output_dim {
            return Err(Error::LengthMismatch {
                what: "action bounds",
                expected: spec.output_dim,
                got: low.len().min(high.len()),
            });
        }
        if low.iter().zip(high).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("action low must be < high".into()));
        }
        let scale = low.iter().zip(high).map(|(l, h)| (h - l) / 2.0).collect();
        let bias = low.iter().zip(high).map(|(l, h)| (h + l) / 2.0).collect();
        Ok(Self {
            spec,
            params,
            scale,
            bias,
            low: low.to_vec(),
            high: high.to_vec(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn act_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.high)
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Pre-squash mean and log-std, each `(n, act_dim)`.
    pub fn distribution(&self, g: &mut Graph, obs: Var, bind: Bind) -> Result<(Var, Var)> {
        let in_dim = g.value(obs).dims2().1;
        if in_dim != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                op: "policy input",
                lhs: g.value(obs).shape().to_vec(),
                rhs: vec![self.spec.input_dim],
            });
        }
        let vars = bind_all(g, &self.params, bind);
        let n_hidden = self.spec.hidden.len();
        let mut h = obs;
        for l in 0..n_hidden {
            h = dense(g, h, vars[2 * l], vars[2 * l + 1])?;
            h = match self.spec.activation {
                super::Activation::Tanh => g.tanh(h)?,
                super::Activation::Relu => g.relu(h)?,
            };
        }
        let mean = dense(g, h, vars[2 * n_hidden], vars[2 * n_hidden + 1])?;
        let raw_log_std = dense(g, h, vars[2 * n_hidden + 2], vars[2 * n_hidden + 3])?;
        // LOG_STD_MIN + (MAX - MIN) * (tanh(x) + 1) / 2
        let t = g.tanh(raw_log_std)?;
        let half_range = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        let t = g.scale(t, half_range)?;
        let log_std = g.add_scalar(t, LOG_STD_MIN + half_range)?;
        Ok((mean, log_std))
    }

    fn squash(&self, g: &mut Graph, u: Var) -> Result<Var> {
        let n = g.value(u).dims2().0;
        let t = g.tanh(u)?;
        let scale = g.constant(repeat_rows(&self.scale, n));
        let scaled = g.mul(t, scale)?;
        let bias = g.constant(Tensor::new(vec![self.bias.len()], self.bias.clone())?);
        g.add(scaled, bias)
    }

    /// Per-row `sum_d ln(scale_d * (1 - tanh(u_d)^2))` written as
    /// `ln scale + 2 (ln 2 - u - softplus(-2u))` so it stays finite for any `u`.
    fn log_jacobian(&self, g: &mut Graph, u: Var) -> Result<Var> {
        let m2u = g.scale(u, -2.0)?;
        let sp = g.softplus(m2u)?;
        let w = g.add(u, sp)?;
        let w = g.scale(w, -2.0)?;
        let w = g.add_scalar(w, 2.0 * std::f64::consts::LN_2)?;
        let per_row = g.sum_cols(w)?;
        let ln_scale: f64 = self.scale.iter().map(|s| s.ln()).sum();
        g.add_scalar(per_row, ln_scale)
    }

    /// Reparameterised sample with externally supplied standard-normal noise.
    /// Returns `(action, log_prob)` with shapes `(n, act_dim)` and `(n, 1)`.
    pub fn rsample(&self, g: &mut Graph, obs: Var, noise: &Tensor, bind: Bind) -> Result<(Var, Var)> {
        let (action, log_prob, _) = self.rsample_with_raw(g, obs, noise, bind)?;
        Ok((action, log_prob))
    }

    fn rsample_with_raw(&self, g: &mut Graph, obs: Var, noise: &Tensor, bind: Bind) -> Result<(Var, Var, Var)> {
        let (mean, log_std) = self.distribution(g, obs, bind)?;
        if g.value(mean).shape() != noise.shape() {
            return Err(Error::ShapeMismatch {
                op: "rsample noise",
                lhs: g.value(mean).shape().to_vec(),
                rhs: noise.shape().to_vec(),
            });
        }
        let std = g.exp(log_std)?;
        let xi = g.constant(noise.clone());
        let eps = g.mul(std, xi)?;
        let u = g.add(mean, eps)?;
        let action = self.squash(g, u)?;

        // ln N(u; mean, std) = sum_d (-xi^2/2 - log_std - ln sqrt(2 pi))
        let n = noise.dims2().0;
        let const_rows: Vec<f64> = (0..n)
            .map(|r| noise.row(r).iter().map(|x| -0.5 * x * x - HALF_LN_2PI).sum())
            .collect();
        let neg_ls = g.neg(log_std)?;
        let gauss = g.sum_cols(neg_ls)?;
        let c = g.constant(Tensor::new(vec![n, 1], const_rows)?);
        let gauss = g.add(gauss, c)?;
        let jac = self.log_jacobian(g, u)?;
        let log_prob = g.sub(gauss, jac)?;
        Ok((action, log_prob, u))
    }

    /// Log-density of given pre-squash samples `raw` under the current
    /// parameters, `(n, 1)`. The squash Jacobian does not depend on the
    /// parameters, so likelihood ratios computed from this are exact.
    pub fn log_prob_raw(&self, g: &mut Graph, obs: Var, raw: &Tensor, bind: Bind) -> Result<Var> {
        let (mean, log_std) = self.distribution(g, obs, bind)?;
        if g.value(mean).shape() != raw.shape() {
            return Err(Error::ShapeMismatch {
                op: "log_prob_raw",
                lhs: g.value(mean).shape().to_vec(),
                rhs: raw.shape().to_vec(),
            });
        }
        let (n, d) = raw.dims2();
        let u = g.constant(raw.clone());
        let diff = g.sub(u, mean)?;
        let neg_ls = g.neg(log_std)?;
        let inv_std = g.exp(neg_ls)?;
        let z = g.mul(diff, inv_std)?;
        let z2 = g.square(z)?;
        let z2 = g.scale(z2, -0.5)?;
        let ls = g.add(z2, neg_ls)?;
        let gauss = g.sum_cols(ls)?;

        let ln_scale: f64 = self.scale.iter().map(|s| s.ln()).sum();
        let jac_rows: Vec<f64> = (0..n)
            .map(|r| {
                raw.row(r)
                    .iter()
                    .map(|&u| 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u)))
                    .sum::<f64>()
                    + ln_scale
                    + d as f64 * HALF_LN_2PI
            })
            .collect();
        let c = g.constant(Tensor::new(vec![n, 1], jac_rows)?);
        g.sub(gauss, c)
    }

    /// Entropy of the pre-squash Gaussian, `(n, 1)`.
    pub fn gaussian_entropy(&self, g: &mut Graph, log_std: Var) -> Result<Var> {
        let d = g.value(log_std).dims2().1 as f64;
        let s = g.sum_cols(log_std)?;
        g.add_scalar(s, d * (0.5 + HALF_LN_2PI))
    }

    /// Draws one action per row of `obs`.
    pub fn sample<R: Rng + ?Sized>(&self, obs: &Tensor, rng: &mut R) -> Result<PolicySample> {
        let (n, _) = obs.dims2();
        let d = self.act_dim();
        let noise = standard_normal(n, d, rng);
        self.sample_with_noise(obs, &noise)
    }

    pub fn sample_with_noise(&self, obs: &Tensor, noise: &Tensor) -> Result<PolicySample> {
        let mut g = Graph::new();
        let o = g.constant(obs.clone());
        let (action, log_prob, u) = self.rsample_with_raw(&mut g, o, noise, Bind::Frozen)?;
        let raw = g.value(u).clone();
        let mut action = g.value(action).clone();
        self.keep_inside(&mut action);
        Ok(PolicySample {
            action,
            raw,
            noise: noise.clone(),
            log_prob: g.value(log_prob).data().to_vec(),
        })
    }

    /// Deterministic action `bias + scale * tanh(mean)`.
    pub fn mean_action(&self, obs: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let o = g.constant(obs.clone());
        let (mean, _) = self.distribution(&mut g, o, Bind::Frozen)?;
        let a = self.squash(&mut g, mean)?;
        let mut a = g.value(a).clone();
        self.keep_inside(&mut a);
        Ok(a)
    }

    /// Squashed action for a batch of pre-squash samples.
    pub fn squash_raw(&self, raw: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let u = g.constant(raw.clone());
        let a = self.squash(&mut g, u)?;
        let mut a = g.value(a).clone();
        self.keep_inside(&mut a);
        Ok(a)
    }

    /// `tanh` saturates to exactly 1.0 in floating point for |u| > ~19;
    /// nudge such actions back inside the open interval.
    fn keep_inside(&self, action: &mut Tensor) {
        let d = self.act_dim();
        for (i, a) in action.data_mut().iter_mut().enumerate() {
            let (lo, hi) = (self.low[i % d], self.high[i % d]);
            *a = a.clamp(lo.next_up(), hi.next_down());
        }
    }
}

pub(crate) fn repeat_rows(row: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        data.extend_from_slice(row);
    }
    Tensor::new(vec![n, row.len()], data).expect("non-empty row")
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Tensor {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![n, d], data).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::rng::seeded;

    fn policy_with(mean: f64, std: f64, low: f64, high: f64) -> SquashedGaussianPolicy {
        let spec = MlpSpec::new(1, &[2], 1, Activation::Tanh).unwrap();
        let mut p = SquashedGaussianPolicy::new(spec, &[low], &[high], &mut seeded(0)).unwrap();
        let target = 2.0 * (std.ln() - LOG_STD_MIN) / (LOG_STD_MAX - LOG_STD_MIN) - 1.0;
        let pv = p.params_mut();
        let names: Vec<String> = pv.layout().iter().map(|e| e.name.clone()).collect();
        for (i, name) in names.iter().enumerate() {
            let r = pv.layout()[i].range();
            let fill = match name.as_str() {
                "mean.bias" => mean,
                "log_std.bias" => target.atanh(),
                _ => 0.0,
            };
            pv.values_mut()[r].iter_mut().for_each(|v| *v = fill);
        }
        p
    }

    #[test]
    fn deterministic_limit_is_squashed_mean() {
        let p = policy_with(0.7, (LOG_STD_MIN + 1e-9).exp(), -2.0, 2.0);
        let obs = Tensor::from_rows(&[[0.3]]).unwrap();
        let a = p.mean_action(&obs).unwrap();
        assert!((a.item() - 2.0 * 0.7f64.tanh()).abs() < 1e-12);
        // at the clamp floor a stochastic sample stays within ~7e-3 * 2 of it
        let s = p.sample(&obs, &mut seeded(5)).unwrap();
        assert!((s.action.item() - a.item()).abs() < 0.05);
    }

    #[test]
    fn symmetric_policy_has_zero_mean_actions() {
        let p = policy_with(0.0, 1.0, -1.0, 1.0);
        let n = 100_000;
        let obs = Tensor::zeros(&[n, 1]);
        let s = p.sample(&obs, &mut seeded(11)).unwrap();
        let a = s.action.data();
        let mean = a.iter().sum::<f64>() / n as f64;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 * var.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn log_prob_matches_raw_recomputation() {
        let spec = MlpSpec::new(3, &[8, 8], 2, Activation::Relu).unwrap();
        let p = SquashedGaussianPolicy::new(spec, &[-1.0, -2.0], &[1.0, 3.0], &mut seeded(2)).unwrap();
        let obs = standard_normal(64, 3, &mut seeded(3));
        let s = p.sample(&obs, &mut seeded(4)).unwrap();
        let mut g = Graph::new();
        let o = g.constant(obs);
        let lp = p.log_prob_raw(&mut g, o, &s.raw, Bind::Frozen).unwrap();
        for (a, b) in s.log_prob.iter().zip(g.value(lp).data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn from_params_checks_layout() {
        let spec = MlpSpec::new(3, &[4], 1, Activation::Tanh).unwrap();
        let wrong = ParamVector::from_tensors([("x", Tensor::scalar(0.0))]);
        assert!(SquashedGaussianPolicy::from_params(spec.clone(), wrong, &[-1.0], &[1.0]).is_err());
        assert!(SquashedGaussianPolicy::new(spec, &[1.0], &[1.0], &mut seeded(0)).is_err());
    }
}
