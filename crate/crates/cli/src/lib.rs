//! Experiment runner for graph recurrent networks: dataset generation,
//! training, evaluation, stability sweeps and run comparison, driven by
//! JSON configs.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;

pub use config::{ExperimentConfig, ExperimentKind, ResolvedConfig};
pub use error::{CliError, Result};
