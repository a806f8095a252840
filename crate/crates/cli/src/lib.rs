//! Config-driven experiment runner: perturbation sweeps over seeded
//! replications of RLSPI, LSPI and exact policy iteration.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::{Algorithm, Deploy, ExperimentConfig, Metric, Sweep, UncertaintySpec};
pub use error::{CliError, CliResult};
pub use experiment::{run_sweep, train, write_outputs, AggregateRow, RepSummary, ResultRow, SweepResult};
