use neural_whittle::approximator::{mean_offset, TwoLayerReluNet};
use neural_whittle::env::{circulant_instance, one_hot_features};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn net(m: usize, d: usize, seed: u64) -> TwoLayerReluNet {
    TwoLayerReluNet::init(m, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// f computed straight from the definition.
fn naive_forward(net: &TwoLayerReluNet, theta: &[f64], gate: &[f64], phi: &[f64]) -> f64 {
    let d = net.dim();
    let mut acc = 0.0;
    for (r, b) in net.output_signs().iter().enumerate() {
        let pre_gate: f64 = (0..d).map(|i| gate[r * d + i] * phi[i]).sum();
        let pre: f64 = (0..d).map(|i| theta[r * d + i] * phi[i]).sum();
        if pre_gate > 0.0 {
            acc += b * pre;
        }
    }
    acc / (net.width() as f64).sqrt()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn forward_matches_naive_sum() {
    let n = net(30, 5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let moved: Vec<f64> = n.theta().iter().map(|t| t + rand::Rng::random_range(&mut rng, -0.5..0.5)).collect();
    let m = n.with_theta(&moved).unwrap();
    for i in 0..20 {
        let phi = unit((0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0).collect());
        let full = naive_forward(&m, &moved, &moved, &phi);
        let lin = naive_forward(&m, &moved, m.theta0(), &phi);
        assert!((m.forward(&phi).unwrap() - full).abs() < 1e-12);
        assert!((m.forward_linearized(&phi).unwrap() - lin).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_finite_differences_away_from_kinks() {
    let n = net(40, 6, 3);
    let h = 1e-6;
    for i in 0..10 {
        let phi = unit((0..6).map(|j| ((i * 5 + j * 7) % 13) as f64 - 6.0).collect());
        let g = n.grad(&phi).unwrap();
        let theta = n.theta().to_vec();
        let d = n.dim();
        let margin = (0..n.width())
            .map(|r| (0..d).map(|k| theta[r * d + k] * phi[k]).sum::<f64>().abs())
            .fold(f64::INFINITY, f64::min);
        assert!(margin > 1e-4, "probe too close to a kink");
        for j in 0..theta.len() {
            let mut up = theta.clone();
            up[j] += h;
            let mut dn = theta.clone();
            dn[j] -= h;
            let fd = (n.with_theta(&up).unwrap().forward(&phi).unwrap()
                - n.with_theta(&dn).unwrap().forward(&phi).unwrap())
                / (2.0 * h);
            let scale = g[j].abs().max(1e-3);
            assert!((fd - g[j]).abs() / scale <= 1e-5, "coordinate {j}: fd {fd} vs grad {}", g[j]);
        }
    }
}

#[test]
fn full_and_linearized_agree_at_init() {
    let arm = circulant_instance();
    let fm = one_hot_features(&arm);
    let n = net(200, 8, 7);
    for phi in &fm.table {
        assert_eq!(n.forward(phi).unwrap(), n.forward_linearized(phi).unwrap());
        assert_eq!(n.grad(phi).unwrap(), n.grad_linearized(phi).unwrap());
    }
    assert_eq!(mean_offset(&n, &fm, false), mean_offset(&n, &fm, true));
}

#[test]
fn snapshot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let n = net(12, 4, 9);
    let moved: Vec<f64> = n.theta().iter().map(|t| t * 1.1 + 1e-3).collect();
    let m = n.with_theta(&moved).unwrap();
    let path = dir.path().join("net.csv");
    m.save_snapshot(&path).unwrap();
    assert_eq!(TwoLayerReluNet::load_snapshot(&path).unwrap(), m);
}

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, len)
}

proptest! {
    #[test]
    fn positively_homogeneous_in_theta(seed in 0u64..1000, c in 0.01f64..10.0, phi in vec_strategy(4)) {
        let n = net(16, 4, seed);
        let scaled: Vec<f64> = n.theta().iter().map(|t| c * t).collect();
        let s = n.with_theta(&scaled).unwrap();
        let lhs = s.forward(&phi).unwrap();
        let rhs = c * n.forward(&phi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn linearization_is_linear_in_theta(
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        t1 in vec_strategy(64),
        t2 in vec_strategy(64),
        phi in vec_strategy(4),
    ) {
        let n = net(16, 4, seed);
        let combo: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
        let f = |t: &[f64]| n.with_theta(t).unwrap().forward_linearized(&phi).unwrap();
        let lhs = f(&combo);
        let rhs = a * f(&t1) + b * f(&t2);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn linearized_gradient_is_constant(seed in 0u64..1000, t in vec_strategy(64), phi in vec_strategy(4)) {
        let n = net(16, 4, seed);
        let moved = n.with_theta(&t).unwrap();
        prop_assert_eq!(moved.grad_linearized(&phi).unwrap(), n.grad_linearized(&phi).unwrap());
    }

    #[test]
    fn linearized_value_is_gradient_dot_theta(seed in 0u64..1000, t in vec_strategy(64), phi in vec_strategy(4)) {
        let n = net(16, 4, seed).with_theta(&t).unwrap();
        let g = n.grad_linearized(&phi).unwrap();
        let dot: f64 = g.iter().zip(&t).map(|(x, y)| x * y).sum();
        prop_assert!((dot - n.forward_linearized(&phi).unwrap()).abs() <= 1e-10);
    }
}
