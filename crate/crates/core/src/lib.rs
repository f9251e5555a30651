//! Multi-objective policy-gradient toolkit.
//!
//! Policies are trained against a two-channel reward (task, energy). The
//! energy-minimisation gradient can be folded into the task gradient in three
//! ways (see [`combine`]): projected onto the orthogonal complement of the task
//! gradient with a norm clamp (PEGrad), conditionally projected only on conflict
//! (PCGrad+), or linearly scalarised with a fixed trade-off weight.
//!
//! Everything runs on a small define-by-run reverse-mode differentiator over
//! 64-bit floats ([`autodiff`]); there is no external tensor framework.

// `!(x > 0.0)` guards are deliberate: unlike `x <= 0.0` they also reject NaN.
// Tabular code reads better with explicit state/action indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod combine;
pub mod envs;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod oracle;
pub mod ppo;
pub mod rng;
pub mod runner;
pub mod sac;

pub use autodiff::{AdamState, Graph, ParamEntry, ParamVector, Tensor, Var};
pub use combine::{CombinerOutput, Combiner, Diagnostics, GradPair};
pub use envs::{EnergyMode, Env, EnvId, EnvSpec, StepResult, VectorReward};
pub use error::{Error, Result};
pub use metrics::{MetricsLog, MetricsRow};
pub use runner::{EvalSummary, RunOutcome};
