//! The function-approximation learner: one TD step on the fast iterate
//! `theta` and one subsidy step on the slow iterate `lambda(target)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::{Neural, QModel};
use crate::env::{sample_next, ArmModel, FeatureMap, Transition};
use crate::error::{Error, Result};
use crate::learner::policy::epsilon_greedy;
use crate::learner::schedule::StepSchedule;

/// How the fast step size is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepIndexing {
    /// `alpha_k` with the global iteration counter.
    Global,
    /// `alpha_n` with the visit count of the updated state-action pair.
    PerPair,
}

/// Per-step knobs shared by all learners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub schedule: StepSchedule,
    pub epsilon: f64,
    pub indexing: StepIndexing,
    /// Runs abort once `|lambda|` or `||theta||` exceeds this.
    pub divergence_cap: f64,
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            schedule: StepSchedule::default(),
            epsilon: 0.5,
            indexing: StepIndexing::Global,
            divergence_cap: 1e6,
        }
    }
}

/// What one learner step did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Iteration index of this step (first step is 1).
    pub k: usize,
    pub transition: Transition,
    pub td_error: f64,
    pub alpha: f64,
    pub eta: f64,
    /// `lambda(target)` after the step.
    pub lambda: f64,
}

/// TD error from precomputed values `values[a*S + s]`:
/// `r + (1-A) subsidy - I + max_a f(S',a) - f(S,A)`.
#[inline]
pub(crate) fn td_from_values(values: &[f64], num_states: usize, tr: &Transition, subsidy: f64) -> f64 {
    let offset = values.iter().sum::<f64>() / values.len() as f64;
    let next = values[tr.next_state].max(values[num_states + tr.next_state]);
    let here = values[tr.action as usize * num_states + tr.state];
    let gated = if tr.action == 0 { subsidy } else { 0.0 };
    tr.reward + gated - offset + next - here
}

/// Temporal-difference error of `model` on one transition, with the target
/// state's subsidy `subsidy` paid on passive steps.
pub fn td_error<M: QModel>(model: &M, features: &FeatureMap, tr: &Transition, subsidy: f64) -> f64 {
    let values: Vec<f64> = features.table.iter().map(|phi| model.value(phi)).collect();
    td_from_values(&values, features.num_states, tr, subsidy)
}

/// Learner state for a function-approximation learner.
#[derive(Debug, Clone)]
pub struct LearnerState<M> {
    pub model: M,
    pub lambda_table: Vec<f64>,
    /// Completed steps.
    pub iter: usize,
    pub target_state: usize,
    pub current_state: usize,
    pub visits: Vec<u64>,
    pub rng: ChaCha8Rng,
    values: Vec<f64>,
}

pub type NeuralLearnerState = LearnerState<Neural>;

impl<M: QModel> LearnerState<M> {
    /// Fresh state; the initial arm state is drawn uniformly from `rng`.
    pub fn new(model: M, num_states: usize, target_state: usize, mut rng: ChaCha8Rng) -> Self {
        let current_state = rng.random_range(0..num_states);
        LearnerState {
            model,
            lambda_table: vec![0.0; num_states],
            iter: 0,
            target_state,
            current_state,
            visits: vec![0; 2 * num_states],
            rng,
            values: vec![0.0; 2 * num_states],
        }
    }

    pub fn from_seed(model: M, num_states: usize, target_state: usize, seed: u64) -> Self {
        Self::new(model, num_states, target_state, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_table[self.target_state]
    }

    /// One iteration: sample with epsilon-greedy over `a -> f(theta; phi(S,a))`,
    /// move theta along `alpha * delta * grad f(theta; phi(S,A))` and move
    /// `lambda(target)` by `eta * (f(target,1) - f(target,0))`, both evaluated
    /// at the pre-step parameters.
    pub fn step(&mut self, arm: &ArmModel, features: &FeatureMap, params: &StepParams) -> Result<StepRecord> {
        let s_count = arm.num_states;
        for (v, phi) in self.values.iter_mut().zip(&features.table) {
            *v = self.model.value(phi);
        }
        let s = self.current_state;
        let action = epsilon_greedy([self.values[s], self.values[s_count + s]], params.epsilon, &mut self.rng);
        let tr = sample_next(arm, s, action, &mut self.rng)?;
        let t = self.target_state;
        let delta = td_from_values(&self.values, s_count, &tr, self.lambda_table[t]);

        let k = self.iter + 1;
        let pair = features.pair_index(s, action);
        self.visits[pair] += 1;
        let alpha = match params.indexing {
            StepIndexing::Global => params.schedule.alpha(k),
            StepIndexing::PerPair => params.schedule.alpha(self.visits[pair] as usize),
        };
        let eta = params.schedule.eta(k);
        let gap = self.values[s_count + t] - self.values[t];

        self.model.add_scaled_grad(&features.table[pair], alpha * delta);
        self.lambda_table[t] += eta * gap;
        self.iter = k;
        self.current_state = tr.next_state;

        let lambda = self.lambda_table[t];
        if !lambda.is_finite() || lambda.abs() > params.divergence_cap {
            return Err(Error::Divergence { iter: k, what: "lambda", value: lambda });
        }
        let norm = self.model.params().iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > params.divergence_cap {
            return Err(Error::Divergence { iter: k, what: "||theta||", value: norm });
        }
        Ok(StepRecord { k, transition: tr, td_error: delta, alpha, eta, lambda })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::{Linearized, TwoLayerReluNet};
    use crate::env::{circulant_instance, one_hot_features};

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn zero_net(m: usize, d: usize) -> Neural {
        let signs = (0..m).map(|r| if r % 2 == 0 { 1.0 } else { -1.0 }).collect();
        Neural(TwoLayerReluNet::from_parts(signs, vec![0.0; m * d], d).unwrap())
    }

    #[test]
    fn td_error_zero_net() {
        let arm = circulant_instance();
        let fm = one_hot_features(&arm);
        let net = zero_net(4, 8);
        let passive = Transition { state: 3, action: 0, next_state: 3, reward: 1.0 };
        assert_eq!(td_error(&net, &fm, &passive, 0.0), 1.0);
        let active = Transition { state: 3, action: 1, next_state: 0, reward: 1.0 };
        assert_eq!(td_error(&net, &fm, &active, 0.7), 1.0);
        assert_eq!(td_error(&net, &fm, &passive, 0.7), 1.7);
    }

    #[test]
    fn td_error_by_hand() {
        // m = 1, b = 1, one-hot features in R^8: f(s,a) = max(0, w[a*4+s])
        let arm = circulant_instance();
        let fm = one_hot_features(&arm);
        let w = vec![0.4, -0.2, 0.8, 0.1, 0.3, 0.6, -0.5, 0.2];
        let net = Neural(TwoLayerReluNet::from_parts(vec![1.0], w, 8).unwrap());
        let f = [0.4, 0.0, 0.8, 0.1, 0.3, 0.6, 0.0, 0.2];
        let offset: f64 = f.iter().sum::<f64>() / 8.0;
        // S=1 (index 1), A=0, S'=0 -> max(f(0,0), f(0,1)) = max(0.4, 0.3)
        let tr = Transition { state: 1, action: 0, next_state: 0, reward: 0.0 };
        let expected = 0.0 + 0.25 - offset + 0.4 - 0.0;
        assert!((td_error(&net, &fm, &tr, 0.25) - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_net_step_only_moves_the_trajectory() {
        let arm = circulant_instance();
        let fm = one_hot_features(&arm);
        let mut st = LearnerState::from_seed(zero_net(6, 8), 4, 3, 5);
        let before = st.model.params().to_vec();
        for _ in 0..50 {
            st.step(&arm, &fm, &StepParams::default()).unwrap();
        }
        assert_eq!(st.model.params(), &before[..]);
        assert_eq!(st.lambda(), 0.0);
        assert_eq!(st.iter, 50);
    }

    #[test]
    fn cancelling_net_keeps_lambda() {
        let arm = circulant_instance();
        let fm = one_hot_features(&arm);
        let w: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let mut ww = w.clone();
        ww.extend(&w);
        let net = Neural(TwoLayerReluNet::from_parts(vec![1.0, -1.0], ww, 8).unwrap());
        let mut st = LearnerState::from_seed(net, 4, 1, 2);
        st.step(&arm, &fm, &StepParams::default()).unwrap();
        assert_eq!(st.lambda(), 0.0);
    }

    #[test]
    fn one_step_by_hand() {
        // m = 1, d = 2, b = -1, w = (0.6, 0.2), features on a 2-state arm:
        // phi(0,0)=e1, phi(1,0)=e2, phi(0,1)=(0.6,0.8), phi(1,1)=(0.8,-0.6)
        let arm = ArmModel::new(
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![[0.5, 0.0], [0.0, 1.0]],
        )
        .unwrap();
        let fm = FeatureMap {
            dim: 2,
            num_states: 2,
            table: vec![e(2, 0), e(2, 1), vec![0.6, 0.8], vec![0.8, -0.6]],
        };
        let net = Neural(TwoLayerReluNet::from_parts(vec![-1.0], vec![0.6, 0.2], 2).unwrap());
        let mut st = LearnerState::from_seed(net, 2, 0, 0);
        st.current_state = 0;
        st.lambda_table[0] = 0.3;
        let params = StepParams { epsilon: 0.0, ..StepParams::default() };
        // f values: (0,0)=-0.6, (1,0)=-0.2, (0,1)=-(0.36+0.16)=-0.52, (1,1)=-(0.48-0.12)=-0.36
        // greedy at S=0: f(0,1)=-0.52 > f(0,0)=-0.6 -> A=1, S'=1 deterministically
        let rec = st.step(&arm, &fm, &params).unwrap();
        assert_eq!((rec.transition.action, rec.transition.next_state), (1, 1));
        let offset = (-0.6 - 0.2 - 0.52 - 0.36) / 4.0;
        let delta = 0.0 + 0.0 - offset + (-0.2f64).max(-0.36) - (-0.52);
        assert!((rec.td_error - delta).abs() < 1e-14);
        let alpha = 0.5 / 2.0;
        // grad of f at phi(0,1) = b * phi = -(0.6, 0.8) (pre-activation 0.52 > 0)
        let w_new = [0.6 - alpha * delta * 0.6, 0.2 - alpha * delta * 0.8];
        assert!((st.model.params()[0] - w_new[0]).abs() < 1e-14);
        assert!((st.model.params()[1] - w_new[1]).abs() < 1e-14);
        let eta = 0.1 / 2f64.powf(4.0 / 3.0);
        let lambda = 0.3 + eta * (-0.52 - (-0.6));
        assert!((st.lambda() - lambda).abs() < 1e-14);
    }

    #[test]
    fn divergence_is_reported() {
        let arm = circulant_instance();
        let fm = one_hot_features(&arm);
        let net = TwoLayerReluNet::init(4, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut st = LearnerState::from_seed(Linearized(net), 4, 0, 1);
        let params = StepParams {
            schedule: StepSchedule { alpha0: 0.5, eta0: 1e9 },
            ..StepParams::default()
        };
        let err = (0..100).map(|_| st.step(&arm, &fm, &params)).find_map(|r| r.err());
        assert!(matches!(err, Some(Error::Divergence { what: "lambda", .. })));
    }
}
