//! Experiment harness for single-step memory AMP: instance files, Monte Carlo
//! trials, theory-versus-simulation reports, the identity-check suite and the
//! `ssmamp` command line.

pub mod checks;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod instances;
pub mod kv;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
