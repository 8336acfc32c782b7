//! Tabular Whittle-index Q-learning: relative Q-learning on a table with the
//! mean of all entries as the offset, coupled with a slow subsidy update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{sample_next, ArmModel};
use crate::error::{Error, Result};
use crate::learner::policy::epsilon_greedy;
use crate::learner::td::{td_from_values, StepIndexing, StepParams, StepRecord};

#[derive(Debug, Clone)]
pub struct TabularLearnerState {
    /// `q_table[s] = [Q(s,0), Q(s,1)]`.
    pub q_table: Vec<[f64; 2]>,
    pub lambda_table: Vec<f64>,
    /// Visit counts `n(s,a)`.
    pub visits: Vec<[u64; 2]>,
    pub iter: usize,
    pub target_state: usize,
    pub current_state: usize,
    pub rng: ChaCha8Rng,
}

/// `I(Q) = (1/2S) sum_s (Q(s,0) + Q(s,1))`.
pub fn table_offset(q_table: &[[f64; 2]]) -> f64 {
    let values = flatten(q_table);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Entries ordered `a*S + s`, matching the feature-map pair order.
fn flatten(q_table: &[[f64; 2]]) -> Vec<f64> {
    let mut v: Vec<f64> = q_table.iter().map(|q| q[0]).collect();
    v.extend(q_table.iter().map(|q| q[1]));
    v
}

impl TabularLearnerState {
    pub fn new(num_states: usize, target_state: usize, mut rng: ChaCha8Rng) -> Self {
        let current_state = rng.random_range(0..num_states);
        TabularLearnerState {
            q_table: vec![[0.0; 2]; num_states],
            lambda_table: vec![0.0; num_states],
            visits: vec![[0; 2]; num_states],
            iter: 0,
            target_state,
            current_state,
            rng,
        }
    }

    pub fn from_seed(num_states: usize, target_state: usize, seed: u64) -> Self {
        Self::new(num_states, target_state, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda_table[self.target_state]
    }

    /// Flattened table, used as the parameter vector in diagnostics.
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.q_table)
    }

    /// One asynchronous update of the visited entry plus the subsidy update
    /// of the target state, which happens every iteration.
    pub fn step(&mut self, arm: &ArmModel, params: &StepParams) -> Result<StepRecord> {
        let n = arm.num_states;
        let values = flatten(&self.q_table);
        let s = self.current_state;
        let action = epsilon_greedy(self.q_table[s], params.epsilon, &mut self.rng);
        let tr = sample_next(arm, s, action, &mut self.rng)?;
        let t = self.target_state;
        let delta = td_from_values(&values, n, &tr, self.lambda_table[t]);

        let k = self.iter + 1;
        self.visits[s][action as usize] += 1;
        let alpha = match params.indexing {
            StepIndexing::PerPair => params.schedule.alpha(self.visits[s][action as usize] as usize),
            StepIndexing::Global => params.schedule.alpha(k),
        };
        let eta = params.schedule.eta(k);
        let gap = self.q_table[t][1] - self.q_table[t][0];

        self.q_table[s][action as usize] += alpha * delta;
        self.lambda_table[t] += eta * gap;
        self.iter = k;
        self.current_state = tr.next_state;

        let lambda = self.lambda_table[t];
        if !lambda.is_finite() || lambda.abs() > params.divergence_cap {
            return Err(Error::Divergence { iter: k, what: "lambda", value: lambda });
        }
        let q = self.q_table[s][action as usize];
        if !q.is_finite() || q.abs() > params.divergence_cap {
            return Err(Error::Divergence { iter: k, what: "Q", value: q });
        }
        Ok(StepRecord { k, transition: tr, td_error: delta, alpha, eta, lambda })
    }
}
