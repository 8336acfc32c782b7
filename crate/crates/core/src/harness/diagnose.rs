//! Offline diagnostics over a finished run directory.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::TwoLayerReluNet;
use crate::diagnostics::{
    c0_estimate, diagnostics_record, kappa_estimate, linearization_gap, lipschitz_probe, mixing_time_estimate,
    C0Estimate, DiagnosticsRecord, LipschitzReport, LyapunovContext, PolicySpec, ReferenceSolution,
    DIAGNOSTICS_HEADER,
};
use crate::env::{ArmModel, FeatureMap};
use crate::error::{Error, Result};
use crate::harness::experiment::RunManifest;
use crate::harness::io::{self, RunInfo};
use crate::learner::{Algorithm, StepSchedule};
use crate::oracle::{indexability_scan, relative_value_iteration, DEFAULT_DP_TOL, DEFAULT_MAX_ITER};
use crate::seed::derive_seed;

const LIPSCHITZ_TAG: u64 = 100;
const GAP_TAG: u64 = 101;
const C0_TAG: u64 = 102;

pub const LYAPUNOV_HEADER: [&str; 5] = ["k", "state", "trials", "mean_m", "mean_m_hat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingEntry {
    pub policy: String,
    pub tau: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub width: usize,
    pub mean: f64,
    pub per_seed: Vec<f64>,
}

/// One row of `lyapunov.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRow {
    pub k: usize,
    pub state: usize,
    pub trials: usize,
    pub mean_m: f64,
    pub mean_m_hat: f64,
}

/// Contents of `diagnostics_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub kappa: f64,
    pub kappa_below_one: bool,
    pub indexable_on_grid: bool,
    pub mixing: Vec<MixingEntry>,
    pub lipschitz: LipschitzReport,
    pub gap: Vec<GapEntry>,
    pub c0: Option<Vec<C0Estimate>>,
    pub c0_error: Option<String>,
    /// Trials that contributed to `lyapunov.csv`, per 1-indexed state.
    pub lyapunov_trials: BTreeMap<usize, usize>,
    /// Trials skipped because a reference run had not converged.
    pub reference_rejections: Vec<String>,
}

impl DiagnosticsReport {
    pub fn load(root: &Path) -> Result<Self> {
        io::read_json(&root.join("diagnostics_report.json"))
    }
}

pub fn read_lyapunov_csv(path: &Path) -> Result<Vec<LyapunovRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<LyapunovRow>, _>>()?)
}

fn mixing(arm: &ArmModel, name: &str, policy: &PolicySpec, delta: f64) -> MixingEntry {
    match mixing_time_estimate(arm, policy, delta) {
        Ok(tau) => MixingEntry { policy: name.into(), tau: Some(tau), error: None },
        Err(e) => MixingEntry { policy: name.into(), tau: None, error: Some(e.to_string()) },
    }
}

/// Per-trial Lyapunov records of one neural run, or the reason the trial was
/// skipped.
fn trial_records(
    arm: &ArmModel,
    features: &FeatureMap,
    dir: &Path,
    state: usize,
    schedule: StepSchedule,
    oracle: f64,
) -> Result<std::result::Result<Vec<DiagnosticsRecord>, String>> {
    let info: RunInfo = io::read_json(&dir.join("run.json"))?;
    let label = format!("state {} trial {}", state + 1, info.trial);
    let (Some(stats), None) = (&info.stats, &info.aborted) else {
        return Ok(Err(format!("{label}: run aborted")));
    };
    let Some(lin) = &info.linearized_reference else {
        return Ok(Err(format!("{label}: no linearized reference run")));
    };
    if !stats.meets_reference_criterion || !lin.meets_reference_criterion {
        return Ok(Err(format!(
            "{label}: reference not converged (full: oscillation {:e}, step change {:e}; linearized: oscillation {:e}, step change {:e})",
            stats.lambda_oscillation, stats.mean_step_change, lin.lambda_oscillation, lin.mean_step_change
        )));
    }
    let last = *info.snapshots.iter().max().ok_or_else(|| Error::MissingFile(dir.join("net_k*.csv")))?;
    let final_net = TwoLayerReluNet::load_snapshot(&io::snapshot_path(dir, last))?;
    let linref = TwoLayerReluNet::load_snapshot(&dir.join("linref.csv"))?;
    let reference = ReferenceSolution {
        theta_star: Some(final_net.theta().to_vec()),
        theta0_star: Some(linref.theta().to_vec()),
        lambda_star: oracle,
        provenance: format!("final weights of {}", dir.display()),
    };
    let lambdas: BTreeMap<usize, f64> = io::read_trajectory(&dir.join("trajectory.csv"))?
        .into_iter()
        .map(|r| (r.k, r.lambda))
        .collect();
    let ctx = LyapunovContext { arm, features, net: &final_net, target_state: state, schedule, reference: &reference };
    let mut records = Vec::with_capacity(info.snapshots.len());
    for &k in &info.snapshots {
        let net = TwoLayerReluNet::load_snapshot(&io::snapshot_path(dir, k))?;
        let lambda = *lambdas
            .get(&k)
            .ok_or_else(|| Error::InvalidInput(format!("{label}: no trajectory row for snapshot {k}")))?;
        records.push(diagnostics_record(&ctx, k, net.theta(), lambda)?);
    }
    Ok(Ok(records))
}

fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(DIAGNOSTICS_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a run directory and writes `diagnostics.csv` per Lyapunov trial,
/// `lyapunov.csv` and `diagnostics_report.json`.
pub fn diagnose(root: &Path) -> Result<DiagnosticsReport> {
    let mut manifest = RunManifest::load(root)?;
    let cfg = manifest.config.clone();
    let arm = ArmModel::from_toml_file(&root.join("arm.toml"))?;
    let features: FeatureMap = io::read_json(&root.join("features.json"))?;
    let d = &cfg.diagnostics;
    let parallel = !cfg.serial;
    let neural = cfg.params(Algorithm::Neural);
    let schedule = StepSchedule { alpha0: neural.alpha0, eta0: neural.eta0 };

    let mut lyapunov_rows = Vec::new();
    let mut lyapunov_trials = BTreeMap::new();
    let mut rejections = Vec::new();
    let trained = cfg.algorithms.contains(&Algorithm::Neural);
    let targets = cfg.targets(arm.num_states);
    for &s1 in &d.lyapunov_states {
        let state = s1 - 1;
        if !trained || !targets.contains(&state) {
            continue;
        }
        let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        let mut used = 0;
        for trial in 0..cfg.num_trials {
            let dir = io::run_dir(root, Algorithm::Neural, state, trial);
            match trial_records(&arm, &features, &dir, state, schedule, manifest.oracle[state])? {
                Ok(records) => {
                    write_diagnostics_csv(&dir.join("diagnostics.csv"), &records)?;
                    for r in &records {
                        let e = sums.entry(r.k).or_insert((0.0, 0.0));
                        e.0 += r.lyapunov_m;
                        e.1 += r.lyapunov_m_hat;
                    }
                    used += 1;
                }
                Err(reason) => rejections.push(reason),
            }
        }
        lyapunov_trials.insert(s1, used);
        for (k, (m, m_hat)) in sums {
            let n = used as f64;
            lyapunov_rows.push(LyapunovRow { k, state: s1, trials: used, mean_m: m / n, mean_m_hat: m_hat / n });
        }
    }
    let mut w = csv::Writer::from_path(root.join("lyapunov.csv"))?;
    w.write_record(LYAPUNOV_HEADER)?;
    for r in &lyapunov_rows {
        w.write_record([r.k.to_string(), r.state.to_string(), r.trials.to_string(), r.mean_m.to_string(), r.mean_m_hat.to_string()])?;
    }
    w.flush()?;

    let kappa = kappa_estimate(&arm);
    let dp = relative_value_iteration(&arm, 0.0, DEFAULT_DP_TOL, DEFAULT_MAX_ITER)?;
    let greedy: Vec<u8> = (0..arm.num_states).map(|s| dp.greedy_action(s)).collect();
    let mixing = vec![
        mixing(&arm, "uniform", &PolicySpec::uniform(arm.num_states), d.mixing_delta),
        mixing(&arm, "epsilon-greedy", &PolicySpec::epsilon_greedy(&greedy, neural.epsilon), d.mixing_delta),
    ];
    let (lo, hi) = crate::oracle::default_bracket(&arm);
    let grid: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    let indexable_on_grid = indexability_scan(&arm, &grid)?.indexable;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[LIPSCHITZ_TAG]));
    let template = TwoLayerReluNet::init(neural.width, features.dim, &mut rng)?;
    let lipschitz = lipschitz_probe(&arm, &features, &template, d.lipschitz_pairs, &mut rng)?;

    let mut gap = Vec::new();
    for &m in &d.gap_widths {
        let per_seed = (0..d.gap_seeds)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, &[GAP_TAG, m as u64, i as u64]));
                let net = TwoLayerReluNet::init(m, features.dim, &mut rng)?;
                linearization_gap(&net, &features, d.gap_radius, d.gap_probes, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
        gap.push(GapEntry { width: m, mean, per_seed });
    }

    let mut base = cfg.train_config(Algorithm::Neural, 0);
    base.steps = d.c0_steps;
    let seeds: Vec<u64> = (0..d.c0_seeds as u64).map(|i| derive_seed(cfg.master_seed, &[C0_TAG, i])).collect();
    let (c0, c0_error) = if d.c0_widths.is_empty() {
        (None, None)
    } else {
        match c0_estimate(&arm, &features, &d.c0_widths, &base, &seeds, d.c0_state - 1, parallel) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };

    let report = DiagnosticsReport {
        kappa,
        kappa_below_one: kappa < 1.0,
        indexable_on_grid,
        mixing,
        lipschitz,
        gap,
        c0,
        c0_error,
        lyapunov_trials,
        reference_rejections: rejections,
    };
    io::write_json(&root.join("diagnostics_report.json"), &report)?;
    manifest.refresh(root)?;
    Ok(report)
}
