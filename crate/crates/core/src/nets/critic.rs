use rand::Rng;

use super::{Bind, Mlp, MlpSpec};
use crate::autodiff::{Graph, ParamVector, Tensor, Var};
use crate::error::{Error, Result};

/// State-action critic `Q(s, a)` over the concatenated input.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub obs_dim: usize,
    pub act_dim: usize,
    mlp: Mlp,
}

impl QNetwork {
    pub fn spec_for(obs_dim: usize, act_dim: usize, hidden: &[usize], activation: super::Activation) -> Result<MlpSpec> {
        MlpSpec::new(obs_dim + act_dim, hidden, 1, activation)
    }

    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        check_q_spec(obs_dim, act_dim, &spec)?;
        Ok(Self {
            obs_dim,
            act_dim,
            mlp: Mlp::new(spec, rng)?,
        })
    }

    pub fn from_params(obs_dim: usize, act_dim: usize, spec: MlpSpec, params: ParamVector) -> Result<Self> {
        check_q_spec(obs_dim, act_dim, &spec)?;
        Ok(Self {
            obs_dim,
            act_dim,
            mlp: Mlp::from_params(spec, params)?,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    pub fn params(&self) -> &ParamVector {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        self.mlp.params_mut()
    }

    /// `(n, obs_dim), (n, act_dim) -> (n, 1)`.
    pub fn forward(&self, g: &mut Graph, obs: Var, act: Var, bind: Bind) -> Result<Var> {
        let x = g.concat_cols(obs, act)?;
        self.mlp.forward(g, x, bind)
    }

    /// Graph-free batch evaluation.
    pub fn q_value(&self, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let (o, a) = (g.constant(obs.clone()), g.constant(act.clone()));
        let q = self.forward(&mut g, o, a, Bind::Frozen)?;
        Ok(g.value(q).data().to_vec())
    }
}

fn check_q_spec(obs_dim: usize, act_dim: usize, spec: &MlpSpec) -> Result<()> {
    if spec.input_dim != obs_dim + act_dim || spec.output_dim != 1 {
        return Err(Error::InvalidArgument(format!(
            "critic spec {}->{} does not match obs {obs_dim} + act {act_dim} -> 1",
            spec.input_dim, spec.output_dim
        )));
    }
    Ok(())
}

/// State-value critic `V(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNetwork {
    mlp: Mlp,
}

impl ValueNetwork {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.output_dim != 1 {
            return Err(Error::InvalidArgument("value network must have a scalar output".into()));
        }
        Ok(Self { mlp: Mlp::new(spec, rng)? })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        Ok(Self { mlp: Mlp::zeros(spec)? })
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    pub fn params(&self) -> &ParamVector {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        self.mlp.params_mut()
    }

    pub fn forward(&self, g: &mut Graph, obs: Var, bind: Bind) -> Result<Var> {
        self.mlp.forward(g, obs, bind)
    }

    pub fn value(&self, obs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.mlp.eval(obs)?.into_data())
    }
}

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn polyak_update(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    target.check_layout(online)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("polyak coefficient {tau} outside [0, 1]")));
    }
    for (t, &o) in target.values_mut().iter_mut().zip(online.values()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Slowly tracking copy of a [`QNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    pub net: QNetwork,
    pub tau: f64,
}

impl TargetNetwork {
    pub fn new(online: &QNetwork, tau: f64) -> Self {
        Self { net: online.clone(), tau }
    }

    pub fn update(&mut self, online: &QNetwork) -> Result<()> {
        polyak_update(self.net.params_mut(), online.params(), self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;
    use crate::rng::seeded;

    #[test]
    fn zero_network_outputs_zero() {
        let spec = QNetwork::spec_for(3, 1, &[8, 8], Activation::Relu).unwrap();
        let zero = Mlp::zeros(spec.clone()).unwrap();
        let q = QNetwork::from_params(3, 1, spec, zero.params().clone()).unwrap();
        let obs = Tensor::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 2.0]]).unwrap();
        let act = Tensor::from_rows(&[[0.5], [-0.5]]).unwrap();
        assert_eq!(q.q_value(&obs, &act).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_hidden_unit_hand_computed() {
        // relu(w1 . [s, a] + b1) * w2 + b2 with w1 = (1, 2, 3), b1 = 0.5, w2 = 2, b2 = -1
        let spec = QNetwork::spec_for(2, 1, &[1], Activation::Relu).unwrap();
        let params = ParamVector::from_tensors([
            ("0.weight", Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap()),
            ("0.bias", Tensor::new(vec![1], vec![0.5]).unwrap()),
            ("1.weight", Tensor::new(vec![1, 1], vec![2.0]).unwrap()),
            ("1.bias", Tensor::new(vec![1], vec![-1.0]).unwrap()),
        ]);
        let q = QNetwork::from_params(2, 1, spec, params).unwrap();
        let obs = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let act = Tensor::from_rows(&[[1.0]]).unwrap();
        assert_eq!(q.q_value(&obs, &act).unwrap(), vec![(1.0 + 2.0 + 3.0 + 0.5) * 2.0 - 1.0]);
    }

    #[test]
    fn output_is_batch_by_one() {
        let spec = QNetwork::spec_for(3, 2, &[4], Activation::Tanh).unwrap();
        let q = QNetwork::new(3, 2, spec, &mut seeded(0)).unwrap();
        let mut g = Graph::new();
        let o = g.constant(Tensor::zeros(&[5, 3]));
        let a = g.constant(Tensor::zeros(&[5, 2]));
        let out = q.forward(&mut g, o, a, Bind::Frozen).unwrap();
        assert_eq!(g.value(out).shape(), &[5, 1]);
    }

    #[test]
    fn polyak_extremes_and_geometric_recursion() {
        let spec = QNetwork::spec_for(1, 1, &[2], Activation::Tanh).unwrap();
        let online = QNetwork::new(1, 1, spec.clone(), &mut seeded(3)).unwrap();
        let start = QNetwork::new(1, 1, spec, &mut seeded(4)).unwrap();

        let mut t = TargetNetwork { net: start.clone(), tau: 1.0 };
        t.update(&online).unwrap();
        assert_eq!(t.net.params(), online.params());

        let mut t = TargetNetwork { net: start.clone(), tau: 0.0 };
        t.update(&online).unwrap();
        assert_eq!(t.net.params(), start.params());

        // scalar target 0, online 1: after k steps target = 1 - 0.995^k
        let one = ParamVector::from_tensors([("x", Tensor::scalar(1.0))]);
        let mut target = ParamVector::from_tensors([("x", Tensor::scalar(0.0))]);
        for k in 1..=500 {
            polyak_update(&mut target, &one, 0.005).unwrap();
            let closed = 1.0 - 0.995f64.powi(k);
            assert!((target.values()[0] - closed).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn polyak_rejects_layout_mismatch() {
        let mut a = ParamVector::from_tensors([("x", Tensor::scalar(0.0))]);
        let b = ParamVector::from_tensors([("y", Tensor::scalar(0.0))]);
        assert_eq!(polyak_update(&mut a, &b, 0.5), Err(Error::LayoutMismatch));
    }
}
