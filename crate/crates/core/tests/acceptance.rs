//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing output capture) and then asserts.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use neural_whittle::approximator::TwoLayerReluNet;
use neural_whittle::env::{circulant_instance, one_hot_features};
use neural_whittle::harness::diagnose::read_lyapunov_csv;
use neural_whittle::harness::{io, reproduce, DiagnosticsReport, ExperimentConfig, Summary};
use neural_whittle::learner::Algorithm;
use neural_whittle::oracle::{default_bracket, whittle_index_exact, whittle_table};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_neural-whittle");

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] {verdict} criterion {id} ({name}): {detail}");
}

/// The full default experiment with 20 trials, run once and shared.
fn experiment() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("neural-whittle-acceptance-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let cfg = ExperimentConfig { num_trials: 20, ..ExperimentConfig::default() };
        reproduce(&cfg, &dir).expect("default experiment runs");
        dir
    })
}

#[test]
fn criterion_1_oracle_exactness() {
    let start = Instant::now();
    let table = whittle_table(&circulant_instance(), 1e-6).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let expected = [-0.5, 0.5, 1.0, -1.0];
    let worst = table.indices.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let pass = worst <= 1e-6 && elapsed < 1.0;
    report(1, "oracle exactness", pass, &format!("indices {:?}, max error {worst:e}, {elapsed:.3}s", table.indices));
    assert!(pass);
}

#[test]
fn criterion_2_oracle_self_consistency() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for arm in common::indexable_arms(2, 20, 2024) {
        let (lo, hi) = default_bracket(&arm);
        for s in 0..2 {
            let exact = whittle_index_exact(&arm, s, (lo, hi), 1e-6).unwrap();
            let grid = common::grid_index(&arm, s, lo, hi, 1e-4);
            worst = worst.max((exact - grid).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-3 && elapsed < 30.0;
    report(2, "oracle self-consistency", pass, &format!("20 arms, max |bisection - grid| {worst:e}, {elapsed:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_3_neural_convergence() {
    let summary = Summary::load(experiment()).unwrap();
    let neural = summary.get(Algorithm::Neural).unwrap();
    let errors: Vec<Option<f64>> = neural.states.iter().map(|s| s.final_error).collect();
    let in_band = errors.iter().all(|e| e.is_some_and(|e| e.abs() <= summary.band));
    let ranking = neural.ranking_matches == Some(true);
    let pass = in_band && ranking && neural.states.iter().all(|s| s.trials_ok >= 20);
    let finals: Vec<String> = neural
        .states
        .iter()
        .map(|s| format!("s{}: {:.4} vs {}", s.state, s.final_mean.unwrap_or(f64::NAN), s.oracle))
        .collect();
    report(3, "neural convergence", pass, &format!("{}; ranking matches: {ranking}", finals.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_4_speed_ordering() {
    let summary = Summary::load(experiment()).unwrap();
    let neural = summary.get(Algorithm::Neural).unwrap();
    let tabular = summary.get(Algorithm::Tabular).unwrap();
    let mut wins = 0;
    let mut detail = Vec::new();
    for (n, t) in neural.states.iter().zip(&tabular.states) {
        let earlier = match (n.band_entry, t.band_entry) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        };
        wins += usize::from(earlier);
        detail.push(format!("s{}: neural {:?} tabular {:?}", n.state, n.band_entry, t.band_entry));
    }
    let pass = wins >= 3;
    report(4, "speed ordering", pass, &format!("neural earlier in {wins}/4 ({})", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_5_lyapunov_decay() {
    let rows: Vec<_> = read_lyapunov_csv(&experiment().join("lyapunov.csv"))
        .unwrap()
        .into_iter()
        .filter(|r| r.state == 4)
        .collect();
    let at = |k: usize| rows.iter().find(|r| r.k == k).map(|r| r.mean_m);
    let last = rows.iter().max_by_key(|r| r.k);
    let (pass, detail) = match (at(100), at(1000), last) {
        (Some(m100), Some(m1000), Some(last)) => {
            let ratio = last.mean_m / m100;
            let slope = (last.mean_m.ln() - m1000.ln()) / ((last.k as f64).ln() - 1000f64.ln());
            (
                ratio <= 0.1 && (-1.5..=-0.3).contains(&slope),
                format!(
                    "E[M] k=100 {m100:.4e}, k={} {:.4e}, ratio {ratio:.3}, slope {slope:.3} ({} trials)",
                    last.k, last.mean_m, last.trials
                ),
            )
        }
        _ => (false, "no Lyapunov records (every reference run rejected)".to_string()),
    };
    report(5, "Lyapunov decay", pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_6_c0_trend() {
    let r = DiagnosticsReport::load(experiment()).unwrap();
    let means: Vec<(usize, Option<f64>)> = r.c0.iter().flatten().map(|e| (e.width, e.mean)).collect();
    let pass = means.len() == 3
        && means.iter().all(|m| m.1.is_some())
        && means.windows(2).all(|w| w[1].1.unwrap() <= 1.2 * w[0].1.unwrap());
    let detail = match &r.c0_error {
        Some(e) => format!("c0 unavailable: {e}"),
        None => format!("{means:?}"),
    };
    report(6, "c0 trend", pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_7_linearization_gap() {
    let r = DiagnosticsReport::load(experiment()).unwrap();
    let gap = |m: usize| r.gap.iter().find(|g| g.width == m).map(|g| g.mean);
    let (g50, g400) = (gap(50), gap(400));
    let pass = matches!((g50, g400), (Some(a), Some(b)) if b < a);
    report(7, "linearization gap", pass, &format!("gap(50) {g50:?}, gap(400) {g400:?}"));
    assert!(pass);
}

#[test]
fn criterion_8_lipschitz_suite() {
    let r = DiagnosticsReport::load(experiment()).unwrap();
    let lip = r.lipschitz;

    let arm = circulant_instance();
    let fm = one_hot_features(&arm);
    let net = TwoLayerReluNet::init(200, 8, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let exact_at_init = fm.table.iter().all(|phi| net.forward(phi).unwrap() == net.forward_linearized(phi).unwrap());

    // finite differences on generic features, coordinates away from kinks
    let moved = net.with_theta(&net.theta().iter().map(|t| t * 0.9 + 0.01).collect::<Vec<_>>()).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..8 {
        let raw: Vec<f64> = (0..8).map(|j| ((i * 5 + j * 3) % 7) as f64 - 3.0 + 0.1).collect();
        let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        let phi: Vec<f64> = raw.iter().map(|x| x / n).collect();
        let g = moved.grad(&phi).unwrap();
        let theta = moved.theta().to_vec();
        for r in 0..200 {
            let pre: f64 = (0..8).map(|k| theta[r * 8 + k] * phi[k]).sum();
            if pre.abs() < 1e-3 {
                continue;
            }
            for k in 0..8 {
                let j = r * 8 + k;
                let mut up = theta.clone();
                up[j] += h;
                let mut dn = theta.clone();
                dn[j] -= h;
                let fd = (moved.with_theta(&up).unwrap().forward(&phi).unwrap()
                    - moved.with_theta(&dn).unwrap().forward(&phi).unwrap())
                    / (2.0 * h);
                if g[j] != 0.0 {
                    worst = worst.max((fd - g[j]).abs() / g[j].abs());
                } else {
                    worst = worst.max(fd.abs());
                }
            }
        }
    }
    let pass = lip.pairs >= 10_000 && lip.total_violations() == 0 && worst <= 1e-5 && exact_at_init;
    report(
        8,
        "Lipschitz suite",
        pass,
        &format!(
            "{} pairs, violations h0/g0/y0 = {}/{}/{} (max ratios {:.3}/{:.3}/{:.3}), fd rel error {worst:.2e}, f = f0 at init: {exact_at_init}",
            lip.pairs,
            lip.h0.violations,
            lip.g0.violations,
            lip.y0.violations,
            lip.h0.max_ratio,
            lip.g0.max_ratio,
            lip.y0.max_ratio
        ),
    );
    assert!(pass);
}

fn outputs(root: &Path) -> BTreeMap<String, Vec<u8>> {
    io::inventory(root)
        .unwrap()
        .into_iter()
        .filter(|f| (f.ends_with(".csv") || f.ends_with(".json")) && f != "manifest.json")
        .map(|f| {
            let bytes = fs::read(root.join(&f)).unwrap();
            (f, bytes)
        })
        .collect()
}

#[test]
fn criterion_9_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        "num_trials = 3\nmaster_seed = 77\n[neural]\nsteps = 5000\nwidth = 32\n[tabular]\nsteps = 5000\n\
         [diagnostics]\nc0_widths = [16, 32]\nc0_seeds = 2\nc0_steps = 5000\nlipschitz_pairs = 500\n",
    )
    .unwrap();
    let run = |name: &str, serial: bool| {
        let out = tmp.path().join(name);
        let mut cmd = Command::new(BIN);
        cmd.arg("reproduce").arg("--config").arg(&config).arg("--out").arg(&out);
        if serial {
            cmd.arg("--serial");
        }
        let status = cmd.status().unwrap();
        assert!(status.success(), "reproduce failed: {status:?}");
        outputs(&out)
    };
    let a = run("a", false);
    let b = run("b", false);
    let c = run("c", true);
    let pass = !a.is_empty() && a == b && a == c && a.contains_key("summary.json");
    report(9, "determinism", pass, &format!("{} CSV/JSON files compared across 2 parallel and 1 serial run", a.len()));
    assert!(pass);
}
