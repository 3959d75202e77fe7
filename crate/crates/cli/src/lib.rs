//! Experiment harness around `kronprecon`: generate problems, tabulate the
//! Kronecker approximation quality, and run and compare solvers.

pub mod commands;
pub mod config;
mod output;

use kronprecon::deblur::DeblurError;
use kronprecon::factor::FactorError;
use kronprecon::krylov::KrylovError;
use thiserror::Error;

pub use commands::{
    cmd_compare, cmd_decompose, cmd_generate, cmd_solve, cmd_sweep, CompareReport, DecomposeRow,
    ProblemInfo, RunOutcome, SolveSummary, SweepRow,
};
pub use config::{ExperimentConfig, ParamKind, RawConfig, SolverKind, SweepSpec};
pub use output::{read_summary, SCHEMAS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<DeblurError> for CliError {
    fn from(e: DeblurError) -> Self {
        match e {
            DeblurError::Io(_) | DeblurError::Bundle(_) => CliError::Io(e.to_string()),
            DeblurError::Factor(_) | DeblurError::Kron(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<FactorError> for CliError {
    fn from(e: FactorError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<KrylovError> for CliError {
    fn from(e: KrylovError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
