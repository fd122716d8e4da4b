//! Command-line front end for Shapley neuron valuation experiments.
//!
//! Subcommands: `run`, `exact`, `hpo`, `analyze`, `gen-stream`. Exit status
//! is 0 on success, 2 for configuration errors, 3 for data errors and 4 when
//! a game is too large for exact mode.

pub mod analyze;
pub mod app;
pub mod config;
pub mod error;
pub mod exact;
pub mod hpo;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
