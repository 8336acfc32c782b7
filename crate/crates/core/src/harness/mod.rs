//! Monte-Carlo experiment harness: configuration, runs, offline diagnostics
//! and plots.

pub mod config;
pub mod diagnose;
pub mod experiment;
pub mod io;
pub mod plots;

pub use config::{AlgoParams, DiagnosticsConfig, ExperimentConfig};
pub use diagnose::{diagnose, DiagnosticsReport};
pub use experiment::{output_root, run_experiment, RunManifest, Summary};
pub use plots::emit_plots;

use std::path::Path;

use crate::error::Result;

/// Training, diagnostics (when enabled) and plots in one go.
pub fn reproduce(cfg: &ExperimentConfig, root: &Path) -> Result<RunManifest> {
    run_experiment(cfg, root)?;
    if cfg.diagnostics.enabled {
        diagnose(root)?;
    }
    emit_plots(root)?;
    RunManifest::load(root)
}
