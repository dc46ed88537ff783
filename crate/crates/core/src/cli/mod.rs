//! Experiment runner behind the command-line front end: TOML configs,
//! scenario presets, CSV rows and the validation suite.

pub mod config;
pub mod output;
pub mod runners;
pub mod validate;

pub use config::{ExperimentConfig, Scenario};
pub use output::{ResultRow, RunOutput};
pub use runners::{run_accuracy_sweep, run_compare_optimizers, run_optimize};
pub use validate::{run_validate, ValidationReport};

use crate::error::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit code for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ParameterDomain(_) | Error::InvalidModel(_) | Error::Io { .. } => EXIT_CONFIG,
        Error::Numerical(_) | Error::SolverFailure(_) | Error::DegenerateObjective => EXIT_NUMERICAL,
    }
}
