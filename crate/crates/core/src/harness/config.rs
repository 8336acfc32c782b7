use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{circulant_instance, one_hot_features, ArmModel, FeatureMap};
use crate::error::{Error, Result};
use crate::learner::{Algorithm, StepSchedule, TrainConfig};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "NEURAL_WHITTLE_OUT";

/// Iterations per target state used by `reproduce` unless overridden.
pub const DEFAULT_STEPS: usize = 50_000;

/// Hyperparameters of one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoParams {
    pub steps: usize,
    pub epsilon: f64,
    pub alpha0: f64,
    pub eta0: f64,
    /// Hidden width; ignored by the tabular and linear learners.
    pub width: usize,
}

impl Default for AlgoParams {
    fn default() -> Self {
        AlgoParams {
            steps: DEFAULT_STEPS,
            epsilon: 0.5,
            alpha0: 0.5,
            eta0: 0.1,
            width: 200,
        }
    }
}

/// Settings of the offline diagnostics stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    /// States (1-indexed) whose neural runs get a linearized companion run
    /// and Lyapunov diagnostics.
    pub lyapunov_states: Vec<usize>,
    pub c0_widths: Vec<usize>,
    pub c0_seeds: usize,
    pub c0_steps: usize,
    /// 1-indexed target state for the `c0` runs.
    pub c0_state: usize,
    pub gap_widths: Vec<usize>,
    pub gap_radius: f64,
    pub gap_probes: usize,
    pub gap_seeds: usize,
    pub lipschitz_pairs: usize,
    pub mixing_delta: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            enabled: true,
            lyapunov_states: vec![4],
            c0_widths: vec![50, 100, 200],
            c0_seeds: 20,
            c0_steps: DEFAULT_STEPS,
            c0_state: 4,
            gap_widths: vec![50, 400],
            gap_radius: 1.0,
            gap_probes: 20,
            gap_seeds: 10,
            lipschitz_pairs: 10_000,
            mixing_delta: 1e-3,
        }
    }
}

/// Full description of an experiment. Loaded from TOML; CLI flags override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"circulant"` or a path to an arm TOML file.
    pub arm: String,
    /// `"one-hot"` or a path to a feature-map TOML file.
    pub features: String,
    pub algorithms: Vec<Algorithm>,
    /// 1-indexed target states; empty means every state.
    pub target_states: Vec<usize>,
    pub num_trials: usize,
    pub master_seed: u64,
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
    /// Run trials one after another instead of on the thread pool.
    pub serial: bool,
    pub neural: AlgoParams,
    pub tabular: AlgoParams,
    pub linear: AlgoParams,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arm: "circulant".into(),
            features: "one-hot".into(),
            algorithms: vec![Algorithm::Neural, Algorithm::Tabular],
            target_states: Vec::new(),
            num_trials: 100,
            master_seed: 2024,
            checkpoint_every: 100,
            output_dir: PathBuf::from("out"),
            serial: false,
            neural: AlgoParams::default(),
            tabular: AlgoParams::default(),
            linear: AlgoParams::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn params(&self, algorithm: Algorithm) -> &AlgoParams {
        match algorithm {
            Algorithm::Tabular => &self.tabular,
            Algorithm::Linear => &self.linear,
            Algorithm::Neural | Algorithm::Linearized => &self.neural,
        }
    }

    pub fn params_mut(&mut self, algorithm: Algorithm) -> &mut AlgoParams {
        match algorithm {
            Algorithm::Tabular => &mut self.tabular,
            Algorithm::Linear => &mut self.linear,
            Algorithm::Neural | Algorithm::Linearized => &mut self.neural,
        }
    }

    pub fn train_config(&self, algorithm: Algorithm, seed: u64) -> TrainConfig {
        let p = self.params(algorithm);
        TrainConfig {
            steps: p.steps,
            epsilon: p.epsilon,
            schedule: StepSchedule { alpha0: p.alpha0, eta0: p.eta0 },
            seed,
            checkpoint_every: self.checkpoint_every,
            width: p.width,
            indexing: None,
            divergence_cap: 1e6,
        }
    }

    pub fn resolve_arm(&self) -> Result<ArmModel> {
        match self.arm.as_str() {
            "circulant" => Ok(circulant_instance()),
            path => ArmModel::from_toml_file(Path::new(path)),
        }
    }

    pub fn resolve_features(&self, arm: &ArmModel) -> Result<FeatureMap> {
        let fm = match self.features.as_str() {
            "one-hot" => one_hot_features(arm),
            path => FeatureMap::from_toml_file(Path::new(path))?,
        };
        if fm.num_states != arm.num_states {
            return Err(Error::InvalidConfig("feature map does not match the arm".into()));
        }
        Ok(fm)
    }

    /// 0-indexed target states.
    pub fn targets(&self, num_states: usize) -> Vec<usize> {
        if self.target_states.is_empty() {
            (0..num_states).collect()
        } else {
            self.target_states.iter().map(|s| s - 1).collect()
        }
    }

    /// Checks every invariant before anything runs.
    pub fn validate(&self) -> Result<(ArmModel, FeatureMap)> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_trials < 1 {
            return bad("num_trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.checkpoint_every < 1 {
            return bad("checkpoint_every must be positive".into());
        }
        let arm = self.resolve_arm().map_err(|e| match e {
            Error::MissingFile(p) => Error::InvalidConfig(format!("arm file {} not found", p.display())),
            other => other,
        })?;
        let features = self.resolve_features(&arm)?;
        for &s in self.target_states.iter().chain(&self.diagnostics.lyapunov_states) {
            if s == 0 || s > arm.num_states {
                return bad(format!("state {s} outside 1..={}", arm.num_states));
            }
        }
        for alg in &self.algorithms {
            let p = self.params(*alg);
            if p.steps < 1 || p.width < 1 {
                return bad(format!("{}: steps and width must be positive", alg.name()));
            }
            if !(p.alpha0 > 0.0 && p.eta0 > 0.0) || !(0.0..=1.0).contains(&p.epsilon) {
                return bad(format!("{}: hyperparameters out of range", alg.name()));
            }
        }
        let d = &self.diagnostics;
        if d.enabled {
            if d.c0_state == 0 || d.c0_state > arm.num_states {
                return bad(format!("c0_state {} out of range", d.c0_state));
            }
            if !(d.mixing_delta > 0.0 && d.mixing_delta < 1.0) || !(d.gap_radius >= 0.0) {
                return bad("diagnostics parameters out of range".into());
            }
        }
        Ok((arm, features))
    }

    /// SHA-256 of the result-affecting settings. Independent of TOML key
    /// order, the output directory and the serial flag.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
            obj.remove("serial");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
