//! Single-arm average-reward MDPs, feature maps and transition sampling.
//!
//! States are 0-indexed throughout the library. Reports and the CLI use
//! 1-indexed states.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for transition kernels. Rows outside it are rejected.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// One restless arm: passive and active transition kernels plus a reward table.
///
/// `kernel_passive[s][s']` is `p(s'|s,0)`, `kernel_active[s][s']` is
/// `p(s'|s,1)` and `reward[s][a]` is `r(s,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub num_states: usize,
    pub kernel_passive: Vec<Vec<f64>>,
    pub kernel_active: Vec<Vec<f64>>,
    pub reward: Vec<[f64; 2]>,
}

/// A single broken [`ArmModel`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewStates(usize),
    Shape(String),
    RowSum { action: u8, row: usize, sum: f64 },
    Negative { action: u8, row: usize, col: usize, value: f64 },
    NonFinite { what: &'static str, row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewStates(n) => write!(f, "need at least 2 states, got {n}"),
            Violation::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Violation::RowSum { action, row, sum } => {
                write!(f, "kernel for action {action}: row {row} sums to {sum}")
            }
            Violation::Negative { action, row, col, value } => {
                write!(f, "kernel for action {action}: entry ({row},{col}) is negative ({value})")
            }
            Violation::NonFinite { what, row, col } => {
                write!(f, "{what}: entry ({row},{col}) is not finite")
            }
        }
    }
}

impl ArmModel {
    /// Builds an arm and rejects it unless every invariant holds.
    pub fn new(
        kernel_passive: Vec<Vec<f64>>,
        kernel_active: Vec<Vec<f64>>,
        reward: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let arm = ArmModel {
            num_states: reward.len(),
            kernel_passive,
            kernel_active,
            reward,
        };
        arm.check()?;
        Ok(arm)
    }

    /// Loads an arm from TOML with keys `num_states`, `kernel_passive`,
    /// `kernel_active` and `reward`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let arm: ArmModel = toml::from_str(text)?;
        arm.check()?;
        Ok(arm)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("arm model serializes")
    }

    /// Lists every broken invariant; empty iff the arm is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.num_states;
        if n < 2 {
            out.push(Violation::TooFewStates(n));
        }
        if self.reward.len() != n {
            out.push(Violation::Shape(format!(
                "reward has {} rows, expected {n}",
                self.reward.len()
            )));
        }
        for (s, r) in self.reward.iter().enumerate() {
            for (a, v) in r.iter().enumerate() {
                if !v.is_finite() {
                    out.push(Violation::NonFinite { what: "reward", row: s, col: a });
                }
            }
        }
        for (action, kernel) in [(0u8, &self.kernel_passive), (1u8, &self.kernel_active)] {
            if kernel.len() != n {
                out.push(Violation::Shape(format!(
                    "kernel for action {action} has {} rows, expected {n}",
                    kernel.len()
                )));
                continue;
            }
            for (row, probs) in kernel.iter().enumerate() {
                if probs.len() != n {
                    out.push(Violation::Shape(format!(
                        "kernel for action {action}: row {row} has {} entries, expected {n}",
                        probs.len()
                    )));
                    continue;
                }
                let mut finite = true;
                for (col, &p) in probs.iter().enumerate() {
                    if !p.is_finite() {
                        finite = false;
                        out.push(Violation::NonFinite { what: "kernel", row, col });
                    } else if p < 0.0 {
                        out.push(Violation::Negative { action, row, col, value: p });
                    }
                }
                let sum: f64 = probs.iter().sum();
                if finite && (sum - 1.0).abs() > ROW_SUM_TOL {
                    out.push(Violation::RowSum { action, row, sum });
                }
            }
        }
        out
    }

    fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArm(v.iter().map(|x| x.to_string()).collect()))
        }
    }

    /// Transition row `p(.|state, action)`.
    #[inline]
    pub fn row(&self, state: usize, action: u8) -> &[f64] {
        if action == 0 {
            &self.kernel_passive[state]
        } else {
            &self.kernel_active[state]
        }
    }

    #[inline]
    pub fn reward(&self, state: usize, action: u8) -> f64 {
        self.reward[state][action as usize]
    }

    pub fn reward_spread(&self) -> f64 {
        let all = self.reward.iter().flat_map(|r| r.iter().copied());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    }
}

/// The 4-state circulant benchmark arm.
///
/// Active moves the state up by one with probability 1/2 (wrapping 4 -> 1),
/// passive moves it down by one with probability 1/2 (wrapping 1 -> 4).
/// Rewards are -1, 0, 0, 1 for both actions.
pub fn circulant_instance() -> ArmModel {
    let kernel_active = vec![
        vec![0.5, 0.5, 0.0, 0.0],
        vec![0.0, 0.5, 0.5, 0.0],
        vec![0.0, 0.0, 0.5, 0.5],
        vec![0.5, 0.0, 0.0, 0.5],
    ];
    let kernel_passive = vec![
        vec![0.5, 0.0, 0.0, 0.5],
        vec![0.5, 0.5, 0.0, 0.0],
        vec![0.0, 0.5, 0.5, 0.0],
        vec![0.0, 0.0, 0.5, 0.5],
    ];
    let reward = vec![[-1.0, -1.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]];
    ArmModel::new(kernel_passive, kernel_active, reward).expect("circulant arm is valid")
}

/// Feature vectors `phi(s,a)` for every state-action pair.
///
/// `table[a * S + s]` holds `phi(s,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub dim: usize,
    pub num_states: usize,
    pub table: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn new(num_states: usize, table: Vec<Vec<f64>>) -> Result<Self> {
        let dim = table.first().map_or(0, Vec::len);
        let map = FeatureMap { dim, num_states, table };
        let problems = map.validate();
        if problems.is_empty() {
            Ok(map)
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    /// Loads a feature map from TOML with keys `num_states` and `table`
    /// (rows ordered by `a * S + s`).
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        #[derive(Deserialize)]
        struct Raw {
            num_states: usize,
            table: Vec<Vec<f64>>,
        }
        let raw: Raw = toml::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(raw.num_states, raw.table)
    }

    #[inline]
    pub fn pair_index(&self, state: usize, action: u8) -> usize {
        action as usize * self.num_states + state
    }

    #[inline]
    pub fn get(&self, state: usize, action: u8) -> &[f64] {
        &self.table[self.pair_index(state, action)]
    }

    pub fn num_pairs(&self) -> usize {
        self.table.len()
    }

    /// Checks the norm bound and linear independence. Returns a list of
    /// human-readable problems.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push("feature dimension must be positive".to_string());
        }
        if self.table.len() != 2 * self.num_states {
            out.push(format!(
                "expected {} feature rows, got {}",
                2 * self.num_states,
                self.table.len()
            ));
        }
        for (i, row) in self.table.iter().enumerate() {
            if row.len() != self.dim {
                out.push(format!("feature row {i} has length {}", row.len()));
                continue;
            }
            if row.iter().any(|v| !v.is_finite()) {
                out.push(format!("feature row {i} is not finite"));
                continue;
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 + 1e-12 {
                out.push(format!("feature row {i} has norm {norm} > 1"));
            }
        }
        if out.is_empty() && matrix_rank(&self.table, 1e-10) < self.table.len() {
            out.push("feature vectors are linearly dependent".to_string());
        }
        out
    }
}

/// One-hot features: `phi(s,a)` is the basis vector `e_{a*S+s}` in `R^{2S}`.
pub fn one_hot_features(arm: &ArmModel) -> FeatureMap {
    let s = arm.num_states;
    let d = 2 * s;
    let table = (0..d)
        .map(|i| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v
        })
        .collect();
    FeatureMap { dim: d, num_states: s, table }
}

/// Rank by Gaussian elimination with partial pivoting.
pub fn matrix_rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let ncols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..ncols {
        if rank == m.len() {
            break;
        }
        let pivot = (rank..m.len())
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col].abs() <= tol {
            continue;
        }
        m.swap(rank, pivot);
        let (top, rest) = m.split_at_mut(rank + 1);
        let pivot_row = &top[rank];
        for row in rest {
            let factor = row[col] / pivot_row[col];
            if factor != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= factor * p;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// One observed step `(S_k, A_k, S_{k+1})` with its reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: u8,
    pub next_state: usize,
    pub reward: f64,
}

/// Draws an index from a probability row by inverse-CDF sampling.
pub fn sample_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last state with positive mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Samples the next state of the arm from `(state, action)`.
pub fn sample_next<R: Rng + ?Sized>(
    arm: &ArmModel,
    state: usize,
    action: u8,
    rng: &mut R,
) -> Result<Transition> {
    if state >= arm.num_states {
        return Err(Error::InvalidInput(format!(
            "state {state} out of range for {} states",
            arm.num_states
        )));
    }
    if action > 1 {
        return Err(Error::InvalidInput(format!("action {action} is not 0 or 1")));
    }
    let next_state = sample_index(arm.row(state, action), rng);
    Ok(Transition {
        state,
        action,
        next_state,
        reward: arm.reward(state, action),
    })
}
