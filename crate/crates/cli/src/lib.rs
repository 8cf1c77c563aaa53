//! Named, reproducible experiments over the `bpire` simulation core.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

use thiserror::Error;

pub use config::{load_config, parse_config, ConfigError, Experiment, ExperimentConfig};
pub use experiments::run_experiment;
pub use report::{emit_report, Metric, RunReport};

/// Exit code when every metric passes.
pub const EXIT_PASS: i32 = 0;
/// Exit code when a metric misses its tolerance.
pub const EXIT_METRIC_FAIL: i32 = 1;
/// Exit code when the model violates `E m^kappa < 1` or the moment condition.
pub const EXIT_HYPOTHESIS: i32 = 2;
/// Exit code for configuration, numerical and I/O errors.
pub const EXIT_ERROR: i32 = 3;
/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] bpire::Error),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Hypothesis(_) => EXIT_HYPOTHESIS,
            _ => EXIT_ERROR,
        }
    }
}
