//! Policy and critic networks.

mod critic;
mod policy;

pub use critic::{polyak_update, QNetwork, TargetNetwork, ValueNetwork};
pub use policy::{standard_normal, PolicySample, SquashedGaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamVector, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidArgument("mlp needs at least one hidden layer".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("mlp dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each dense layer, output layer last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// How a network's parameters enter a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bind {
    /// Registered with [`Graph::param`]; gradients are returned by `backward`.
    Trainable,
    /// Registered as constants; no gradient flows into them.
    Frozen,
}

pub(crate) fn bind_all(g: &mut Graph, params: &ParamVector, bind: Bind) -> Vec<Var> {
    (0..params.layout().len())
        .map(|i| {
            let t = params.entry_tensor(i);
            match bind {
                Bind::Trainable => g.param(params.layout()[i].name.clone(), t),
                Bind::Frozen => g.constant(t),
            }
        })
        .collect()
}

/// PyTorch-style default initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// for both weight and bias.
pub(crate) fn push_dense<R: Rng + ?Sized>(pv: &mut ParamVector, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    pv.push(format!("{prefix}.weight"), Tensor::new(vec![fan_in, fan_out], w).unwrap());
    pv.push(format!("{prefix}.bias"), Tensor::new(vec![fan_out], b).unwrap());
}

pub(crate) fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let h = g.matmul(x, w)?;
    g.add(h, b)
}

/// Plain feed-forward network; layer `i` is stored as `{i}.weight` with shape
/// `(fan_in, fan_out)` followed by `{i}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParamVector,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamVector::empty();
        for (i, (fi, fo)) in spec.layer_dims().into_iter().enumerate() {
            push_dense(&mut params, &i.to_string(), fi, fo, rng);
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        let reference = Self::zeros(spec.clone())?;
        reference.params.check_layout(&params)?;
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamVector::empty();
        for (i, (fi, fo)) in spec.layer_dims().into_iter().enumerate() {
            params.push(format!("{i}.weight"), Tensor::zeros(&[fi, fo]));
            params.push(format!("{i}.bias"), Tensor::zeros(&[fo]));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn forward(&self, g: &mut Graph, x: Var, bind: Bind) -> Result<Var> {
        let in_dim = g.value(x).dims2().1;
        if in_dim != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp input",
                lhs: g.value(x).shape().to_vec(),
                rhs: vec![self.spec.input_dim],
            });
        }
        let vars = bind_all(g, &self.params, bind);
        let n_layers = vars.len() / 2;
        let mut h = x;
        for l in 0..n_layers {
            h = dense(g, h, vars[2 * l], vars[2 * l + 1])?;
            if l + 1 < n_layers {
                h = self.spec.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }

    /// Graph-free evaluation on a batch.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv, Bind::Frozen)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(3, &[], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(0, &[4], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(3, &[4, 0], 1, Activation::Tanh).is_err());
        assert!(MlpSpec::new(3, &[4], 1, Activation::Relu).is_ok());
    }

    #[test]
    fn layout_is_a_function_of_spec() {
        let spec = MlpSpec::new(3, &[5, 4], 2, Activation::Tanh).unwrap();
        let a = Mlp::new(spec.clone(), &mut seeded(1)).unwrap();
        let b = Mlp::new(spec, &mut seeded(2)).unwrap();
        assert!(a.params().same_layout(b.params()));
        let names: Vec<_> = a.params().layout().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["0.weight", "0.bias", "1.weight", "1.bias", "2.weight", "2.bias"]);
        assert_eq!(a.params().len(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let spec = MlpSpec::new(3, &[4], 1, Activation::Tanh).unwrap();
        let net = Mlp::new(spec, &mut seeded(0)).unwrap();
        assert!(net.eval(&Tensor::zeros(&[2, 4])).is_err());
    }
}
