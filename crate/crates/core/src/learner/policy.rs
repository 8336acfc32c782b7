use rand::Rng;

use crate::error::{Error, Result};

/// With probability `epsilon` a uniformly random action, otherwise the argmax
/// of `values` with ties going to action 0.
pub fn epsilon_greedy<R: Rng + ?Sized>(values: [f64; 2], epsilon: f64, rng: &mut R) -> u8 {
    let u: f64 = rng.random();
    if u < epsilon {
        u8::from(rng.random::<bool>())
    } else {
        greedy(values)
    }
}

#[inline]
pub fn greedy(values: [f64; 2]) -> u8 {
    u8::from(values[1] > values[0])
}

/// Activates the `k` arms with the largest index; ties go to the smaller arm
/// id. Returned ids are sorted ascending.
pub fn top_k_policy(indices: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > indices.len() {
        return Err(Error::InvalidInput(format!(
            "K must lie in [1, {}], got {k}",
            indices.len()
        )));
    }
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by(|&a, &b| indices[b].total_cmp(&indices[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}
