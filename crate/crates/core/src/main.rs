use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use neural_whittle::env::{circulant_instance, ArmModel};
use neural_whittle::harness::{self, ExperimentConfig, RunManifest};
use neural_whittle::learner::Algorithm;
use neural_whittle::oracle::{default_bracket, indexability_scan, whittle_table, DEFAULT_INDEX_TOL};
use neural_whittle::{Error, Result};

#[derive(Parser)]
#[command(name = "neural-whittle", version, about = "Whittle-index Q-learning for restless bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the exact Whittle index of every state.
    Oracle {
        /// Arm TOML file, or "circulant".
        #[arg(long, default_value = "circulant")]
        arm: String,
        #[arg(long, default_value_t = DEFAULT_INDEX_TOL)]
        tol: f64,
        /// Also scan a subsidy grid for indexability.
        #[arg(long)]
        check_indexability: bool,
    },
    /// Run the training stage of an experiment.
    Train(RunArgs),
    /// Compute offline diagnostics for a run directory.
    Diagnose { dir: PathBuf },
    /// Render plots for a run directory.
    Plot { dir: PathBuf },
    /// Train, diagnose and plot.
    Reproduce(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "NEURAL_WHITTLE_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Iterations per run, applied to every algorithm.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated, e.g. "neural,tabular".
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<Algorithm>>,
    /// Comma-separated 1-indexed target states.
    #[arg(long, value_delimiter = ',')]
    states: Option<Vec<usize>>,
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    no_diagnostics: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_toml_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.trials {
            cfg.num_trials = n;
        }
        if let Some(t) = self.steps {
            for alg in Algorithm::ALL {
                cfg.params_mut(alg).steps = t;
            }
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(a) = &self.algorithms {
            cfg.algorithms = a.clone();
        }
        if let Some(s) = &self.states {
            cfg.target_states = s.clone();
        }
        cfg.serial |= self.serial;
        if self.no_diagnostics {
            cfg.diagnostics.enabled = false;
        }
        let root = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        cfg.output_dir = root.clone();
        Ok((cfg, root))
    }
}

fn oracle(arm: &str, tol: f64, check: bool) -> Result<()> {
    let arm = match arm {
        "circulant" => circulant_instance(),
        path => ArmModel::from_toml_file(std::path::Path::new(path))?,
    };
    let table = whittle_table(&arm, tol)?;
    println!("state,index");
    for (s, v) in table.indices.iter().enumerate() {
        println!("{},{}", s + 1, v);
    }
    if check {
        let (lo, hi) = default_bracket(&arm);
        let grid: Vec<f64> = (0..=400).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect();
        let report = indexability_scan(&arm, &grid)?;
        eprintln!("indexable on grid: {}", report.indexable);
    }
    Ok(())
}

/// Exit status after a run: 2 when any trial aborted.
fn run_status(m: &RunManifest) -> u8 {
    for a in &m.aborted {
        eprintln!("aborted: {} state {} trial {}: {}", a.algorithm.name(), a.state, a.trial, a.error);
    }
    if m.aborted.is_empty() {
        0
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Oracle { arm, tol, check_indexability } => oracle(&arm, tol, check_indexability).map(|_| 0),
        Command::Train(args) => {
            let (cfg, root) = args.resolve()?;
            let m = harness::run_experiment(&cfg, &root)?;
            eprintln!("{} runs, {} aborted, written to {}", m.seeds.len(), m.aborted.len(), root.display());
            Ok(run_status(&m))
        }
        Command::Diagnose { dir } => {
            let r = harness::diagnose(&dir)?;
            eprintln!("kappa {}, lipschitz violations {}", r.kappa, r.lipschitz.total_violations());
            Ok(0)
        }
        Command::Plot { dir } => {
            for p in harness::emit_plots(&dir)? {
                println!("{}", p.display());
            }
            Ok(0)
        }
        Command::Reproduce(args) => {
            let (cfg, root) = args.resolve()?;
            let m = harness::reproduce(&cfg, &root)?;
            eprintln!(
                "{} runs, {} aborted, {:.1}s, written to {}",
                m.seeds.len(),
                m.aborted.len(),
                m.wall_clock_seconds,
                root.display()
            );
            Ok(run_status(&m))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
