//! Experiment runner for the `rbcd` solvers: seed-replicated comparisons of
//! GIST against randomized block-coordinate descent, block-size sweeps, and
//! the trace and summary files they produce.

pub mod config;
pub mod experiment;
pub mod metrics;

pub use config::{ExperimentConfig, RawConfig};
pub use experiment::{run_experiment, summarize, sweep_blocks, ExperimentOutput, RunRecord, SummaryRow};

/// Failures mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<rbcd::Error> for CliError {
    fn from(e: rbcd::Error) -> Self {
        match e {
            rbcd::Error::Io(_) | rbcd::Error::Parse { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
