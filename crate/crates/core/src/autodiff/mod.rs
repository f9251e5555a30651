//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The op surface is what small MLP policies and critics need: matmul,
//! elementwise arithmetic, a handful of activations, reductions, and bias
//! broadcasting over a batch dimension.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{sigmoid, softplus, Graph, Var};
pub use params::{ParamEntry, ParamVector};
pub use tensor::Tensor;

pub(crate) use params::{dot, norm};
