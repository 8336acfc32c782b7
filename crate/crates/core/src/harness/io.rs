//! On-disk layout and file formats of an experiment directory.
//!
//! ```text
//! <out>/arm.toml, oracle.csv, summary.json, lyapunov.csv,
//!       diagnostics_report.json, manifest.json, plots/*.svg
//! <out>/runs/<algorithm>/state<s>/trial<t>/
//!       trajectory.csv, run.json, net_k<k>.csv, linref.csv, diagnostics.csv
//! ```
//!
//! States are 1-indexed in every file. Floats are written in shortest
//! round-trip decimal form.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Algorithm, StepRecord};

pub const TRAJECTORY_HEADER: [&str; 7] = ["k", "lambda", "alpha", "eta", "visited_state", "action", "td_error"];

pub fn run_dir(root: &Path, algorithm: Algorithm, state: usize, trial: usize) -> PathBuf {
    root.join("runs")
        .join(algorithm.name())
        .join(format!("state{}", state + 1))
        .join(format!("trial{trial}"))
}

pub fn snapshot_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("net_k{k}.csv"))
}

/// One parsed row of `trajectory.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub eta: f64,
    /// 1-indexed.
    pub visited_state: usize,
    pub action: u8,
    pub td_error: f64,
}

impl From<&StepRecord> for TrajectoryRow {
    fn from(r: &StepRecord) -> Self {
        TrajectoryRow {
            k: r.k,
            lambda: r.lambda,
            alpha: r.alpha,
            eta: r.eta,
            visited_state: r.transition.state + 1,
            action: r.transition.action,
            td_error: r.td_error,
        }
    }
}

pub fn write_trajectory(path: &Path, rows: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows.iter().map(TrajectoryRow::from) {
        w.write_record([
            r.k.to_string(),
            r.lambda.to_string(),
            r.alpha.to_string(),
            r.eta.to_string(),
            r.visited_state.to_string(),
            r.action.to_string(),
            r.td_error.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_HEADER {
        return Err(Error::InvalidInput(format!("{}: unexpected header {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<TrajectoryRow>, _>>()?)
}

/// Convergence statistics of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub final_lambda: f64,
    pub lambda_oscillation: f64,
    pub mean_step_change: f64,
    pub meets_reference_criterion: bool,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub algorithm: Algorithm,
    /// 1-indexed target state.
    pub state: usize,
    pub trial: usize,
    pub seed: u64,
    pub steps: usize,
    pub epsilon: f64,
    pub alpha0: f64,
    pub eta0: f64,
    pub width: usize,
    pub checkpoint_every: usize,
    pub oracle_index: f64,
    /// `None` on success, the error message otherwise.
    pub aborted: Option<String>,
    pub stats: Option<RunStats>,
    /// Steps with a saved network snapshot.
    pub snapshots: Vec<usize>,
    /// Statistics of the linearized companion run, when one was made.
    pub linearized_reference: Option<RunStats>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes `oracle.csv` with 1-indexed states.
pub fn write_oracle_csv(path: &Path, indices: &[f64]) -> Result<()> {
    fs::write(path, oracle_csv(indices))?;
    Ok(())
}

pub fn oracle_csv(indices: &[f64]) -> String {
    let mut out = String::from("state,index\n");
    for (s, v) in indices.iter().enumerate() {
        out.push_str(&format!("{},{}\n", s + 1, v));
    }
    out
}

/// Relative paths of every file under `root`, sorted.
pub fn inventory(root: &Path) -> Result<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else if let Ok(rel) = path.strip_prefix(base) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}
