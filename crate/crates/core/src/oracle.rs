//! Exact Whittle indices via relative value iteration on the subsidized
//! average-reward Bellman equation, plus bisection on the subsidy.

use serde::{Deserialize, Serialize};

use crate::env::ArmModel;
use crate::error::{Error, Result};

pub const DEFAULT_DP_TOL: f64 = 1e-8;
pub const DEFAULT_INDEX_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;
/// Reference state whose relative value is pinned to zero.
pub const REFERENCE_STATE: usize = 0;
const MAX_BRACKET_DOUBLINGS: usize = 10;
/// Advantages at or below this count as a tie, which resolves passive.
const TIE_TOL: f64 = 1e-9;

/// Solution of the subsidized average-reward DP for one subsidy value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSolution {
    pub subsidy: f64,
    /// Average reward per step.
    pub gain: f64,
    /// Relative values with `value[REFERENCE_STATE] == 0`.
    pub value: Vec<f64>,
    /// `q_table[s] = [Q(s,0), Q(s,1)]`.
    pub q_table: Vec<[f64; 2]>,
    pub iterations: usize,
    /// Span of the final Bellman residual.
    pub residual: f64,
}

impl DpSolution {
    /// `Q(s,1) - Q(s,0)`.
    pub fn advantage(&self, state: usize) -> f64 {
        self.q_table[state][1] - self.q_table[state][0]
    }

    /// Greedy action with ties going to passive.
    pub fn greedy_action(&self, state: usize) -> u8 {
        u8::from(self.advantage(state) > TIE_TOL)
    }
}

fn bellman_q(arm: &ArmModel, subsidy: f64, value: &[f64], state: usize) -> [f64; 2] {
    let expect = |row: &[f64]| row.iter().zip(value).map(|(p, v)| p * v).sum::<f64>();
    [
        arm.reward(state, 0) + subsidy + expect(arm.row(state, 0)),
        arm.reward(state, 1) + expect(arm.row(state, 1)),
    ]
}

/// Relative value iteration with span-based stopping.
///
/// Solves `Q(s,a) + gain = r(s,a) + (1-a) * subsidy + sum_s' p(s'|s,a) V(s')`
/// with `V(s) = max_a Q(s,a)` and `V(0) = 0`.
pub fn relative_value_iteration(
    arm: &ArmModel,
    subsidy: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DpSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let n = arm.num_states;
    let mut value = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..n {
            let q = bellman_q(arm, subsidy, &value, s);
            next[s] = q[0].max(q[1]);
            let diff = next[s] - value[s];
            lo = lo.min(diff);
            hi = hi.max(diff);
        }
        residual = hi - lo;
        let pin = next[REFERENCE_STATE];
        for (v, t) in value.iter_mut().zip(&next) {
            *v = t - pin;
        }
        if residual <= tol {
            // one more application gives the gain and Q at the final V
            let q_raw: Vec<[f64; 2]> = (0..n).map(|s| bellman_q(arm, subsidy, &value, s)).collect();
            let gain = q_raw[REFERENCE_STATE][0].max(q_raw[REFERENCE_STATE][1]);
            let q_table = q_raw.iter().map(|q| [q[0] - gain, q[1] - gain]).collect();
            return Ok(DpSolution {
                subsidy,
                gain,
                value,
                q_table,
                iterations: iter,
                residual,
            });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// A bisection run: the index and every `(subsidy, advantage)` probed.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSearch {
    pub index: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Default bracket `[-R, R]` with `R = 2 (max r - min r + 1)`.
pub fn default_bracket(arm: &ArmModel) -> (f64, f64) {
    let r = 2.0 * (arm.reward_spread() + 1.0);
    (-r, r)
}

/// Whittle index of `state` by bisection on the advantage `Q(s,1) - Q(s,0)`.
pub fn whittle_index_exact(
    arm: &ArmModel,
    state: usize,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    whittle_index_search(arm, state, bracket, tol).map(|s| s.index)
}

/// Same as [`whittle_index_exact`] but keeps the bisection trace.
pub fn whittle_index_search(
    arm: &ArmModel,
    state: usize,
    bracket: (f64, f64),
    tol: f64,
) -> Result<IndexSearch> {
    if state >= arm.num_states {
        return Err(Error::InvalidInput(format!("state {state} out of range")));
    }
    if !(tol > 0.0) || !(bracket.0 < bracket.1) {
        return Err(Error::InvalidInput(format!(
            "need tol > 0 and lo < hi, got tol={tol}, bracket={bracket:?}"
        )));
    }
    let dp_tol = DEFAULT_DP_TOL.min(tol * 1e-3);
    let mut trace = Vec::new();
    let adv = |lambda: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let a = relative_value_iteration(arm, lambda, dp_tol, DEFAULT_MAX_ITER)?.advantage(state);
        trace.push((lambda, a));
        Ok(a)
    };

    let (mut lo, mut hi) = bracket;
    let mut a_lo = adv(lo, &mut trace)?;
    let mut a_hi = adv(hi, &mut trace)?;
    let mut doublings = 0;
    while a_lo.signum() == a_hi.signum() && a_lo.abs() > tol && a_hi.abs() > tol {
        if doublings == MAX_BRACKET_DOUBLINGS {
            return Err(Error::NoSignChange { state, lo, hi });
        }
        let width = hi - lo;
        lo -= width / 2.0;
        hi += width / 2.0;
        a_lo = adv(lo, &mut trace)?;
        a_hi = adv(hi, &mut trace)?;
        doublings += 1;
    }
    if a_lo.abs() <= tol {
        return Ok(IndexSearch { index: lo, trace });
    }
    if a_hi.abs() <= tol {
        return Ok(IndexSearch { index: hi, trace });
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let a_mid = adv(mid, &mut trace)?;
        if (a_mid.abs() <= tol && hi - lo <= tol) || a_mid == 0.0 || mid == lo || mid == hi {
            return Ok(IndexSearch { index: mid, trace });
        }
        if a_mid.signum() == a_lo.signum() {
            lo = mid;
            a_lo = a_mid;
        } else {
            hi = mid;
        }
    }
}

/// Whittle indices for every state of an arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittleTable {
    pub indices: Vec<f64>,
    pub tolerance: f64,
}

pub fn whittle_table(arm: &ArmModel, tol: f64) -> Result<WhittleTable> {
    let bracket = default_bracket(arm);
    let indices = (0..arm.num_states)
        .map(|s| {
            whittle_index_exact(arm, s, bracket, tol).map_err(|e| Error::AtState {
                state: s,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WhittleTable { indices, tolerance: tol })
}

/// Passive sets `D(lambda)` along a subsidy grid and whether they are nested.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexabilityReport {
    pub grid: Vec<f64>,
    /// `passive_sets[i][s]` is true when `s` is in `D(grid[i])`.
    pub passive_sets: Vec<Vec<bool>>,
    pub indexable: bool,
}

pub fn indexability_scan(arm: &ArmModel, grid: &[f64]) -> Result<IndexabilityReport> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("subsidy grid must be strictly increasing".into()));
    }
    let passive_sets = grid
        .iter()
        .map(|&lambda| {
            let sol = relative_value_iteration(arm, lambda, DEFAULT_DP_TOL, DEFAULT_MAX_ITER)?;
            Ok((0..arm.num_states).map(|s| sol.greedy_action(s) == 0).collect())
        })
        .collect::<Result<Vec<Vec<bool>>>>()?;
    let indexable = passive_sets
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(&before, &after)| !before || after));
    Ok(IndexabilityReport {
        grid: grid.to_vec(),
        passive_sets,
        indexable,
    })
}
