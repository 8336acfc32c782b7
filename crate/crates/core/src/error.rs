use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// The CLI maps these onto process exit codes: input-domain and validation
/// failures exit with 1, divergence with 2 and I/O failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid arm model: {}", .0.join("; "))]
    InvalidArm(Vec<String>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("relative value iteration did not converge after {iterations} iterations (last span residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no sign change of the advantage for state {state} within [{lo}, {hi}]; arm may be non-indexable")]
    NoSignChange { state: usize, lo: f64, hi: f64 },

    #[error("state {state}: {source}")]
    AtState {
        state: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iterate diverged at k={iter}: {what} = {value:e}")]
    Divergence {
        iter: usize,
        what: &'static str,
        value: f64,
    },

    #[error("reference solution unavailable: {0}")]
    MissingReference(String),

    #[error("reference run did not converge: {0}")]
    ReferenceNotConverged(String),

    #[error("Markov chain assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 2,
            Error::Io(_) | Error::Csv(_) | Error::MissingFile(_) | Error::Plot(_) => 3,
            Error::AtState { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
