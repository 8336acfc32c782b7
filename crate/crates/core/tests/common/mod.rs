#![allow(dead_code)]

use neural_whittle::env::ArmModel;
use neural_whittle::oracle::{indexability_scan, relative_value_iteration, DEFAULT_DP_TOL, DEFAULT_MAX_ITER};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// A random arm with strictly positive kernels and rewards in [0, 1].
pub fn random_arm<R: Rng>(n: usize, rng: &mut R) -> ArmModel {
    let p0 = (0..n).map(|_| random_row(n, rng)).collect();
    let p1 = (0..n).map(|_| random_row(n, rng)).collect();
    let reward = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    ArmModel::new(p0, p1, reward).unwrap()
}

/// `count` indexable random arms drawn from `seed`.
pub fn indexable_arms(n: usize, count: usize, seed: u64) -> Vec<ArmModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<f64> = (0..=200).map(|i| -6.0 + 0.06 * i as f64).collect();
    let mut out = Vec::new();
    while out.len() < count {
        let arm = random_arm(n, &mut rng);
        if indexability_scan(&arm, &grid).unwrap().indexable {
            out.push(arm);
        }
    }
    out
}

/// Index by brute force: the first grid subsidy at which the passive action
/// is weakly preferred, refined to the midpoint of the crossing cell.
pub fn grid_index(arm: &ArmModel, state: usize, lo: f64, hi: f64, step: f64) -> f64 {
    let adv = |l: f64| relative_value_iteration(arm, l, DEFAULT_DP_TOL, DEFAULT_MAX_ITER).unwrap().advantage(state);
    let n = ((hi - lo) / step).ceil() as usize;
    let mut prev = lo;
    for i in 0..=n {
        let l = lo + step * i as f64;
        if adv(l) <= 0.0 {
            return if i == 0 { l } else { 0.5 * (prev + l) };
        }
        prev = l;
    }
    hi
}
