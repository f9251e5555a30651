//! Command-line harness around `pegrad-core`: TOML run configs, JSON
//! checkpoints, multi-seed training, sweeps and SVG plots.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::{Algorithm, RunConfig};
pub use error::CliError;
