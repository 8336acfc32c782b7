//! Training stage: oracle, per-trial runs and the summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{ArmModel, FeatureMap};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::io::{self, RunInfo, RunStats};
use crate::learner::{train_index, Algorithm, TrainOutcome};
use crate::oracle::{whittle_table, DEFAULT_INDEX_TOL};
use crate::par::map_ordered;
use crate::seed::derive_seed;

/// Half-width of the accuracy band around the oracle index.
pub const BAND: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub algorithm: Algorithm,
    pub state: usize,
    pub trial: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortEntry {
    pub algorithm: Algorithm,
    pub state: usize,
    pub trial: usize,
    pub error: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub oracle: Vec<f64>,
    pub seeds: Vec<SeedEntry>,
    pub aborted: Vec<AbortEntry>,
    pub files: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(root: &Path) -> Result<Self> {
        io::read_json(&root.join("manifest.json"))
    }

    /// Re-lists the directory and rewrites `manifest.json`.
    pub fn refresh(&mut self, root: &Path) -> Result<()> {
        let mut files = io::inventory(root)?;
        if !files.iter().any(|f| f == "manifest.json") {
            files.push("manifest.json".into());
            files.sort();
        }
        self.files = files;
        io::write_json(&root.join("manifest.json"), self)
    }
}

/// Per-state aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    /// 1-indexed.
    pub state: usize,
    pub oracle: f64,
    pub trials_ok: usize,
    pub trials_aborted: usize,
    pub ks: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `None` when every trial aborted.
    pub final_mean: Option<f64>,
    pub final_std: Option<f64>,
    pub final_error: Option<f64>,
    /// First checkpoint from which the mean stays within the band.
    pub band_entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub states: Vec<StateSummary>,
    /// Whether the final means order the states like the oracle does.
    /// `None` unless every state was trained.
    pub ranking_matches: Option<bool>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub band: f64,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl Summary {
    pub fn load(root: &Path) -> Result<Self> {
        io::read_json(&root.join("summary.json"))
    }

    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    algorithm: Algorithm,
    state: usize,
    trial: usize,
    seed: u64,
}

struct Ctx<'a> {
    root: &'a Path,
    cfg: &'a ExperimentConfig,
    arm: &'a ArmModel,
    features: &'a FeatureMap,
    oracle: &'a [f64],
}

fn stats(run: &TrainOutcome) -> RunStats {
    RunStats {
        final_lambda: run.final_lambda,
        lambda_oscillation: run.lambda_oscillation,
        mean_step_change: run.last_step_change,
        meets_reference_criterion: run.meets_reference_criterion(),
    }
}

fn save_snapshots(dir: &Path, run: &TrainOutcome) -> Result<Vec<usize>> {
    let Some(net) = run.model.net() else {
        return Ok(Vec::new());
    };
    let mut ks = Vec::with_capacity(run.snapshots.len());
    for (k, theta) in &run.snapshots {
        net.with_theta(theta)?.save_snapshot(&io::snapshot_path(dir, *k))?;
        ks.push(*k);
    }
    Ok(ks)
}

/// Trains one trial and writes its directory. Training failures become an
/// [`AbortEntry`]; I/O failures are returned as errors.
fn run_job(ctx: &Ctx, job: Job) -> Result<Option<AbortEntry>> {
    let dir = io::run_dir(ctx.root, job.algorithm, job.state, job.trial);
    fs::create_dir_all(&dir)?;
    let tc = ctx.cfg.train_config(job.algorithm, job.seed);
    let p = ctx.cfg.params(job.algorithm);
    let mut info = RunInfo {
        algorithm: job.algorithm,
        state: job.state + 1,
        trial: job.trial,
        seed: job.seed,
        steps: p.steps,
        epsilon: p.epsilon,
        alpha0: p.alpha0,
        eta0: p.eta0,
        width: p.width,
        checkpoint_every: ctx.cfg.checkpoint_every,
        oracle_index: ctx.oracle[job.state],
        aborted: None,
        stats: None,
        snapshots: Vec::new(),
        linearized_reference: None,
    };

    let run = match train_index(ctx.arm, ctx.features, job.algorithm, job.state, &tc) {
        Ok(run) => run,
        Err(e) => {
            info.aborted = Some(e.to_string());
            io::write_json(&dir.join("run.json"), &info)?;
            return Ok(Some(AbortEntry {
                algorithm: job.algorithm,
                state: job.state + 1,
                trial: job.trial,
                error: e.to_string(),
            }));
        }
    };
    io::write_trajectory(&dir.join("trajectory.csv"), &run.checkpoints)?;
    info.snapshots = save_snapshots(&dir, &run)?;
    info.stats = Some(stats(&run));

    let d = &ctx.cfg.diagnostics;
    if d.enabled && job.algorithm == Algorithm::Neural && d.lyapunov_states.contains(&(job.state + 1)) {
        match train_index(ctx.arm, ctx.features, Algorithm::Linearized, job.state, &tc) {
            Ok(lin) => {
                lin.model.net().expect("linearized run has a network").save_snapshot(&dir.join("linref.csv"))?;
                info.linearized_reference = Some(stats(&lin));
            }
            Err(e) => info.aborted = Some(format!("linearized reference: {e}")),
        }
    }
    io::write_json(&dir.join("run.json"), &info)?;
    Ok(None)
}

fn jobs(cfg: &ExperimentConfig, num_states: usize) -> Vec<Job> {
    // Seeds depend on (state, trial) only, so every algorithm sees the same
    // initial states and the same network initialization.
    let mut out = Vec::new();
    for &algorithm in &cfg.algorithms {
        for state in cfg.targets(num_states) {
            for trial in 0..cfg.num_trials {
                let seed = derive_seed(cfg.master_seed, &[state as u64, trial as u64]);
                out.push(Job { algorithm, state, trial, seed });
            }
        }
    }
    out
}

/// Effective output directory: `NEURAL_WHITTLE_OUT` when set, else the
/// configured one.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(crate::harness::config::OUTPUT_ROOT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cfg.output_dir.clone(),
    }
}

/// Runs the oracle and every trial, then writes `summary.json` and
/// `manifest.json` under `root`. Serial and parallel execution produce the
/// same files apart from the manifest's wall-clock entry.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let (arm, features) = cfg.validate()?;
    let oracle = whittle_table(&arm, DEFAULT_INDEX_TOL)?.indices;

    fs::create_dir_all(root)?;
    fs::write(root.join("arm.toml"), arm.to_toml_string())?;
    io::write_json(&root.join("features.json"), &features)?;
    io::write_oracle_csv(&root.join("oracle.csv"), &oracle)?;

    let all = jobs(cfg, arm.num_states);
    let ctx = Ctx { root, cfg, arm: &arm, features: &features, oracle: &oracle };
    let results = map_ordered(all.clone(), !cfg.serial, |job| run_job(&ctx, job));
    let mut aborted = Vec::new();
    for r in results {
        if let Some(a) = r? {
            aborted.push(a);
        }
    }

    let summary = summarize(root, cfg, arm.num_states, &oracle)?;
    io::write_json(&root.join("summary.json"), &summary)?;

    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
        oracle,
        seeds: all
            .iter()
            .map(|j| SeedEntry { algorithm: j.algorithm, state: j.state + 1, trial: j.trial, seed: j.seed })
            .collect(),
        aborted,
        files: Vec::new(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    manifest.refresh(root)?;
    Ok(manifest)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Ordering of `values` by increasing value, ties by index.
fn ranking(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Aggregates the trajectories on disk into per-state curves.
pub fn summarize(root: &Path, cfg: &ExperimentConfig, num_states: usize, oracle: &[f64]) -> Result<Summary> {
    let targets = cfg.targets(num_states);
    let mut algorithms = Vec::new();
    for &algorithm in &cfg.algorithms {
        let mut states = Vec::new();
        for &state in &targets {
            let mut curves: Vec<Vec<(usize, f64)>> = Vec::new();
            let mut aborted = 0;
            for trial in 0..cfg.num_trials {
                let dir = io::run_dir(root, algorithm, state, trial);
                let info: RunInfo = io::read_json(&dir.join("run.json"))?;
                if info.stats.is_none() {
                    aborted += 1;
                    continue;
                }
                let rows = io::read_trajectory(&dir.join("trajectory.csv"))?;
                curves.push(rows.iter().map(|r| (r.k, r.lambda)).collect());
            }
            states.push(state_summary(state, oracle[state], &curves, aborted)?);
        }
        let ranking_matches = (targets.len() == num_states && states.iter().all(|s| s.trials_ok > 0)).then(|| {
            let finals: Vec<f64> = states.iter().flat_map(|s| s.final_mean).collect();
            ranking(&finals) == ranking(oracle)
        });
        algorithms.push(AlgorithmSummary { algorithm, states, ranking_matches });
    }
    Ok(Summary { band: BAND, algorithms })
}

fn state_summary(state: usize, oracle: f64, curves: &[Vec<(usize, f64)>], aborted: usize) -> Result<StateSummary> {
    let empty = StateSummary {
        state: state + 1,
        oracle,
        trials_ok: 0,
        trials_aborted: aborted,
        ks: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        final_mean: None,
        final_std: None,
        final_error: None,
        band_entry: None,
    };
    let Some(first) = curves.first() else {
        return Ok(empty);
    };
    let ks: Vec<usize> = first.iter().map(|p| p.0).collect();
    if curves.iter().any(|c| c.len() != ks.len() || c.iter().zip(&ks).any(|(p, k)| p.0 != *k)) {
        return Err(Error::InvalidInput(format!("state {}: trials disagree on checkpoint steps", state + 1)));
    }
    let mut mean = Vec::with_capacity(ks.len());
    let mut std = Vec::with_capacity(ks.len());
    let mut column = vec![0.0; curves.len()];
    for j in 0..ks.len() {
        for (c, curve) in column.iter_mut().zip(curves) {
            *c = curve[j].1;
        }
        let (m, s) = mean_std(&column);
        mean.push(m);
        std.push(s);
    }
    let inside = |m: &f64| (m - oracle).abs() <= BAND;
    let band_entry = match mean.iter().rposition(|m| !inside(m)) {
        None => ks.first().copied(),
        Some(j) => ks.get(j + 1).copied(),
    };
    let final_mean = mean.last().copied();
    Ok(StateSummary {
        trials_ok: curves.len(),
        final_mean,
        final_std: std.last().copied(),
        final_error: final_mean.map(|m| m - oracle),
        band_entry,
        ks,
        mean,
        std,
        ..empty
    })
}
