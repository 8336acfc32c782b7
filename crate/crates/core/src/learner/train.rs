//! Training loops: one target state at a time, then all states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{LinearApproximator, Linearized, Neural, QModel, TwoLayerReluNet};
use crate::env::{ArmModel, FeatureMap};
use crate::error::{Error, Result};
use crate::learner::tabular::TabularLearnerState;
use crate::learner::td::{LearnerState, StepIndexing, StepParams, StepRecord};
use crate::learner::StepSchedule;
use crate::seed::derive_seed;

/// Which index learner to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tabular,
    Linear,
    Neural,
    /// The network trained through its frozen-activation linearization `f0`;
    /// its fixed point stands in for the approximate stationary point.
    Linearized,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Tabular,
        Algorithm::Linear,
        Algorithm::Neural,
        Algorithm::Linearized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tabular => "tabular",
            Algorithm::Linear => "linear",
            Algorithm::Neural => "neural",
            Algorithm::Linearized => "linearized",
        }
    }

    pub fn id(self) -> u64 {
        self as u64
    }

    pub fn default_indexing(self) -> StepIndexing {
        match self {
            Algorithm::Tabular => StepIndexing::PerPair,
            _ => StepIndexing::Global,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Iterations per target state.
    pub steps: usize,
    pub epsilon: f64,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Hidden width for the network learners.
    pub width: usize,
    /// Overrides the algorithm's default fast step-size indexing.
    pub indexing: Option<StepIndexing>,
    pub divergence_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            epsilon: 0.5,
            schedule: StepSchedule::default(),
            seed: 0,
            checkpoint_every: 100,
            width: 200,
            indexing: None,
            divergence_cap: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must lie in [0,1], got {}", self.epsilon));
        }
        if !(self.schedule.alpha0 > 0.0) || !(self.schedule.eta0 >= 0.0) {
            return bad(format!("step sizes must be positive, got {:?}", self.schedule));
        }
        if self.checkpoint_every < 1 || self.width < 1 {
            return bad("checkpoint interval and width must be positive".into());
        }
        Ok(())
    }

    fn params(&self, algorithm: Algorithm) -> StepParams {
        StepParams {
            schedule: self.schedule,
            epsilon: self.epsilon,
            indexing: self.indexing.unwrap_or(algorithm.default_indexing()),
            divergence_cap: self.divergence_cap,
        }
    }
}

/// Trained parameters of any learner.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tabular(Vec<[f64; 2]>),
    Linear(LinearApproximator),
    Neural(TwoLayerReluNet),
    Linearized(TwoLayerReluNet),
}

impl Model {
    pub fn params(&self) -> Vec<f64> {
        match self {
            Model::Tabular(q) => {
                let mut v: Vec<f64> = q.iter().map(|x| x[0]).collect();
                v.extend(q.iter().map(|x| x[1]));
                v
            }
            Model::Linear(l) => l.weights.clone(),
            Model::Neural(n) | Model::Linearized(n) => n.theta().to_vec(),
        }
    }

    pub fn net(&self) -> Option<&TwoLayerReluNet> {
        match self {
            Model::Neural(n) | Model::Linearized(n) => Some(n),
            _ => None,
        }
    }
}

/// Everything recorded by one `train_index` run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub algorithm: Algorithm,
    pub target_state: usize,
    pub seed: u64,
    /// Step records at every checkpoint interval, at powers of ten and at the
    /// final step.
    pub checkpoints: Vec<StepRecord>,
    /// Parameter snapshots `(k, theta_k)` at powers of ten and the final step.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    pub model: Model,
    pub final_lambda: f64,
    /// `max - min` of `lambda(target)` over the last 1000 steps.
    pub lambda_oscillation: f64,
    /// Mean of `||theta_k - theta_{k-1}||` over the last 1000 steps.
    pub last_step_change: f64,
}

/// Convergence criterion for runs used as reference solutions.
pub const REFERENCE_LAMBDA_OSCILLATION: f64 = 1e-2;
pub const REFERENCE_STEP_CHANGE: f64 = 1e-5;
const OSCILLATION_WINDOW: usize = 1000;

impl TrainOutcome {
    pub fn meets_reference_criterion(&self) -> bool {
        self.lambda_oscillation < REFERENCE_LAMBDA_OSCILLATION
            && self.last_step_change < REFERENCE_STEP_CHANGE
    }

    pub fn lambda_series(&self) -> Vec<(usize, f64)> {
        self.checkpoints.iter().map(|r| (r.k, r.lambda)).collect()
    }
}

pub fn is_snapshot_step(k: usize, total: usize) -> bool {
    if k == total {
        return true;
    }
    let mut p = 1;
    while p < k {
        p *= 10;
    }
    p == k
}

trait Learner {
    fn advance(&mut self, arm: &ArmModel, features: &FeatureMap, params: &StepParams) -> Result<StepRecord>;
    fn param_vec(&self) -> Vec<f64>;
    fn lambda_now(&self) -> f64;
}

impl<M: QModel> Learner for LearnerState<M> {
    fn advance(&mut self, arm: &ArmModel, features: &FeatureMap, params: &StepParams) -> Result<StepRecord> {
        self.step(arm, features, params)
    }
    fn param_vec(&self) -> Vec<f64> {
        self.model.params().to_vec()
    }
    fn lambda_now(&self) -> f64 {
        self.lambda()
    }
}

impl Learner for TabularLearnerState {
    fn advance(&mut self, arm: &ArmModel, _: &FeatureMap, params: &StepParams) -> Result<StepRecord> {
        self.step(arm, params)
    }
    fn param_vec(&self) -> Vec<f64> {
        self.params()
    }
    fn lambda_now(&self) -> f64 {
        self.lambda()
    }
}

struct RunLog {
    checkpoints: Vec<StepRecord>,
    snapshots: Vec<(usize, Vec<f64>)>,
    lambda_oscillation: f64,
    last_step_change: f64,
}

fn drive<L: Learner>(
    learner: &mut L,
    arm: &ArmModel,
    features: &FeatureMap,
    cfg: &TrainConfig,
    params: &StepParams,
) -> Result<RunLog> {
    let total = cfg.steps;
    let mut checkpoints = Vec::with_capacity(total / cfg.checkpoint_every + 1);
    let mut snapshots = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let window = OSCILLATION_WINDOW.min(total);
    let mut change_sum = 0.0;
    for k in 1..=total {
        let in_window = k + window > total;
        let before = in_window.then(|| learner.param_vec());
        let rec = learner.advance(arm, features, params)?;
        if in_window {
            lo = lo.min(rec.lambda);
            hi = hi.max(rec.lambda);
        }
        let snap = is_snapshot_step(k, total);
        if k % cfg.checkpoint_every == 0 || snap {
            checkpoints.push(rec);
        }
        if snap {
            snapshots.push((k, learner.param_vec()));
        }
        if let Some(prev) = before {
            let now = learner.param_vec();
            change_sum += prev.iter().zip(&now).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
    }
    debug_assert_eq!(learner.lambda_now(), checkpoints.last().unwrap().lambda);
    Ok(RunLog {
        checkpoints,
        snapshots,
        lambda_oscillation: hi - lo,
        last_step_change: change_sum / window as f64,
    })
}

/// Learns the index of `target_state` for `cfg.steps` iterations.
pub fn train_index(
    arm: &ArmModel,
    features: &FeatureMap,
    algorithm: Algorithm,
    target_state: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_index_from(arm, features, algorithm, target_state, cfg, None)
}

/// Like [`train_index`] but optionally continuing from an existing model
/// instead of a fresh initialization.
pub fn train_index_from(
    arm: &ArmModel,
    features: &FeatureMap,
    algorithm: Algorithm,
    target_state: usize,
    cfg: &TrainConfig,
    start: Option<Model>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if target_state >= arm.num_states {
        return Err(Error::InvalidInput(format!("target state {target_state} out of range")));
    }
    if features.num_states != arm.num_states {
        return Err(Error::InvalidInput("feature map does not match the arm".into()));
    }
    let params = cfg.params(algorithm);
    let n = arm.num_states;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fresh_net = |rng: &mut ChaCha8Rng| TwoLayerReluNet::init(cfg.width, features.dim, rng);

    let (log, model, final_lambda) = match (algorithm, start) {
        (Algorithm::Tabular, start) => {
            let mut st = TabularLearnerState::new(n, target_state, rng);
            if let Some(Model::Tabular(q)) = start {
                st.q_table = q;
            }
            let log = drive(&mut st, arm, features, cfg, &params)?;
            let lam = st.lambda();
            (log, Model::Tabular(st.q_table), lam)
        }
        (Algorithm::Linear, start) => {
            let lin = match start {
                Some(Model::Linear(l)) => l,
                _ => LinearApproximator::zeros(features.dim),
            };
            let mut st = LearnerState::new(lin, n, target_state, rng);
            let log = drive(&mut st, arm, features, cfg, &params)?;
            let lam = st.lambda();
            (log, Model::Linear(st.model), lam)
        }
        (Algorithm::Neural, start) => {
            let net = match start {
                Some(Model::Neural(net)) => net,
                _ => fresh_net(&mut rng)?,
            };
            let mut st = LearnerState::new(Neural(net), n, target_state, rng);
            let log = drive(&mut st, arm, features, cfg, &params)?;
            let lam = st.lambda();
            (log, Model::Neural(st.model.0), lam)
        }
        (Algorithm::Linearized, start) => {
            let net = match start {
                Some(Model::Linearized(net)) => net,
                _ => fresh_net(&mut rng)?,
            };
            let mut st = LearnerState::new(Linearized(net), n, target_state, rng);
            let log = drive(&mut st, arm, features, cfg, &params)?;
            let lam = st.lambda();
            (log, Model::Linearized(st.model.0), lam)
        }
    };
    Ok(TrainOutcome {
        algorithm,
        target_state,
        seed: cfg.seed,
        checkpoints: log.checkpoints,
        snapshots: log.snapshots,
        model,
        final_lambda,
        lambda_oscillation: log.lambda_oscillation,
        last_step_change: log.last_step_change,
    })
}

/// Result of learning every state's index.
#[derive(Debug)]
pub struct TrainAllOutcome {
    /// Learned `lambda(s)`, `None` where the run aborted.
    pub estimates: Vec<Option<f64>>,
    pub runs: Vec<Result<TrainOutcome>>,
}

/// Runs [`train_index`] for every state. With `shared_init` the approximator
/// is initialized once and carried from one target state to the next;
/// otherwise each state starts from a fresh initialization whose seed is
/// derived from `(cfg.seed, state)`. An aborted state does not stop the rest.
pub fn train_all(
    arm: &ArmModel,
    features: &FeatureMap,
    algorithm: Algorithm,
    cfg: &TrainConfig,
    shared_init: bool,
) -> TrainAllOutcome {
    let mut runs = Vec::with_capacity(arm.num_states);
    let mut carried: Option<Model> = None;
    for s in 0..arm.num_states {
        let seed = derive_seed(cfg.seed, &[algorithm.id(), s as u64]);
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let start = if shared_init { carried.take() } else { None };
        let run = train_index_from(arm, features, algorithm, s, &run_cfg, start)
            .map_err(|e| Error::AtState { state: s, source: Box::new(e) });
        if shared_init {
            if let Ok(out) = &run {
                carried = Some(out.model.clone());
            }
        }
        runs.push(run);
    }
    let estimates = runs.iter().map(|r| r.as_ref().ok().map(|o| o.final_lambda)).collect();
    TrainAllOutcome { estimates, runs }
}
