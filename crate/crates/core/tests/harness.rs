use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use neural_whittle::harness::plots::endpoint_label;
use neural_whittle::harness::{diagnose, emit_plots, reproduce, run_experiment, ExperimentConfig, RunManifest, Summary};
use neural_whittle::learner::Algorithm;
use neural_whittle::Error;

const BIN: &str = env!("CARGO_BIN_EXE_neural-whittle");

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml_str(
        r#"
num_trials = 2
master_seed = 5
checkpoint_every = 500
algorithms = ["neural", "tabular"]

[neural]
steps = 50000
width = 16

[tabular]
steps = 1500

[diagnostics]
lyapunov_states = [4]
c0_widths = [8, 16]
c0_seeds = 2
c0_steps = 50000
gap_widths = [10, 40]
gap_seeds = 2
gap_probes = 3
lipschitz_pairs = 200
"#,
    )
    .unwrap();
    cfg.target_states = vec![1, 4];
    cfg
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for f in neural_whittle::harness::io::inventory(root).unwrap() {
        if f != "manifest.json" {
            out.insert(f.clone(), fs::read(root.join(&f)).unwrap());
        }
    }
    out
}

#[test]
fn serial_parallel_and_repeat_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.serial = true;
    reproduce(&cfg, &tmp.path().join("a")).unwrap();
    reproduce(&cfg, &tmp.path().join("b")).unwrap();
    cfg.serial = false;
    reproduce(&cfg, &tmp.path().join("c")).unwrap();
    let a = files(&tmp.path().join("a"));
    assert!(a.contains_key("summary.json") && a.contains_key("lyapunov.csv"));
    assert!(a.contains_key("runs/neural/state4/trial1/diagnostics.csv"));
    assert_eq!(a, files(&tmp.path().join("b")));
    assert_eq!(a, files(&tmp.path().join("c")));

    let ma = RunManifest::load(&tmp.path().join("a")).unwrap();
    let mc = RunManifest::load(&tmp.path().join("c")).unwrap();
    assert_eq!(ma.config_hash, mc.config_hash);
    assert_eq!(ma.seeds, mc.seeds);
    assert_eq!(ma.files, mc.files);
    assert!(ma.files.contains(&"plots/convergence_state4.svg".to_string()));
}

#[test]
fn same_seed_is_shared_across_algorithms() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.diagnostics.enabled = false;
    let m = run_experiment(&cfg, tmp.path()).unwrap();
    let seed = |alg: Algorithm| m.seeds.iter().find(|e| e.algorithm == alg && e.state == 4 && e.trial == 1).unwrap().seed;
    assert_eq!(seed(Algorithm::Neural), seed(Algorithm::Tabular));
    assert_ne!(m.seeds[0].seed, m.seeds[1].seed);
}

#[test]
fn plot_annotation_matches_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.diagnostics.enabled = false;
    run_experiment(&cfg, tmp.path()).unwrap();
    let written = emit_plots(tmp.path()).unwrap();
    assert_eq!(written.len(), 2);
    let summary = Summary::load(tmp.path()).unwrap();
    let svg = fs::read_to_string(tmp.path().join("plots/convergence_state1.svg")).unwrap();
    for alg in &summary.algorithms {
        let s = alg.states.iter().find(|s| s.state == 1).unwrap();
        assert!(svg.contains(&endpoint_label(alg.algorithm.name(), s.final_mean.unwrap())));
    }
    assert!(svg.contains("<text"));
}

#[test]
fn plots_refuse_bad_inputs_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    run_experiment(&cfg, tmp.path()).unwrap();
    // diagnostics enabled but never computed
    let err = emit_plots(tmp.path()).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)), "{err}");
    assert!(!tmp.path().join("plots").exists());

    diagnose(tmp.path()).unwrap();
    let mut summary = Summary::load(tmp.path()).unwrap();
    for a in &mut summary.algorithms {
        for s in &mut a.states {
            s.trials_ok = 0;
        }
    }
    fs::write(tmp.path().join("summary.json"), serde_json::to_string(&summary).unwrap()).unwrap();
    assert!(matches!(emit_plots(tmp.path()).unwrap_err(), Error::InvalidInput(_)));
    assert!(!tmp.path().join("plots").exists());
}

#[test]
fn trajectory_columns_and_one_indexed_states() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.diagnostics.enabled = false;
    run_experiment(&cfg, tmp.path()).unwrap();
    let path = tmp.path().join("runs/tabular/state4/trial0/trajectory.csv");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("k,lambda,alpha,eta,visited_state,action,td_error\n"));
    let rows = neural_whittle::harness::io::read_trajectory(&path).unwrap();
    assert!(rows.iter().all(|r| (1..=4).contains(&r.visited_state)));
    assert_eq!(rows.last().unwrap().k, 1500);
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 10, 100, 500, 1000, 1500]);
    let oracle = fs::read_to_string(tmp.path().join("oracle.csv")).unwrap();
    assert!(oracle.starts_with("state,index\n1,"));
    assert!(tmp.path().join("runs/neural/state1/trial0/net_k1000.csv").exists());
    assert!(tmp.path().join("runs/neural/state1/trial0/net_k50000.csv").exists());
    assert!(!tmp.path().join("runs/neural/state1/trial0/net_k500.csv").exists());
}

#[test]
fn config_hash_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.diagnostics.enabled = false;
    let m = run_experiment(&cfg, tmp.path()).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.config_hash.len(), 64);
}

#[test]
fn cli_oracle_prints_circulant_indices() {
    let out = Command::new(BIN).args(["oracle"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let values: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    for (v, e) in values.iter().zip([-0.5, 0.5, 1.0, -1.0]) {
        assert!((v - e).abs() <= 1e-6);
    }
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "num_trials = 0\n").unwrap();
    let status = Command::new(BIN).args(["train", "--config"]).arg(&bad).arg("--out").arg(tmp.path().join("x")).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, "num_trails = 3\n").unwrap();
    let status = Command::new(BIN).args(["train", "--config"]).arg(&unknown).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let status = Command::new(BIN).args(["diagnose"]).arg(tmp.path().join("missing")).status().unwrap();
    assert_eq!(status.code(), Some(3));

    let diverge = tmp.path().join("diverge.toml");
    fs::write(&diverge, "num_trials = 1\nalgorithms = [\"neural\"]\ntarget_states = [1]\n[neural]\nsteps = 500\nwidth = 8\nalpha0 = 1e9\n[diagnostics]\nenabled = false\n").unwrap();
    let out_dir = tmp.path().join("div");
    let status = Command::new(BIN).args(["train", "--config"]).arg(&diverge).arg("--out").arg(&out_dir).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert_eq!(RunManifest::load(&out_dir).unwrap().aborted.len(), 1);
}

#[test]
fn cli_output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("env-root");
    let status = Command::new(BIN)
        .args(["train", "--trials", "1", "--steps", "200", "--algorithms", "tabular", "--states", "2", "--no-diagnostics"])
        .env("NEURAL_WHITTLE_OUT", &root)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("runs/tabular/state2/trial0/trajectory.csv").exists());
    let status = Command::new(BIN).arg("plot").arg(&root).status().unwrap();
    assert!(status.success());
    assert!(root.join("plots/convergence_state2.svg").exists());
}
