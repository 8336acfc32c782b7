use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use neural_whittle::approximator::TwoLayerReluNet;
use neural_whittle::env::{circulant_instance, one_hot_features};
use neural_whittle::learner::{train_index, Algorithm, TrainConfig};
use neural_whittle::par::map_ordered;
use neural_whittle::seed::derive_seed;

fn trial_batch(c: &mut Criterion) {
    let arm = circulant_instance();
    let fm = one_hot_features(&arm);
    let mut group = c.benchmark_group("trial_batch");
    group.sample_size(10);
    for parallel in [false, true] {
        let label = if parallel { "parallel" } else { "serial" };
        group.bench_with_input(BenchmarkId::new(label, 16), &parallel, |b, &parallel| {
            b.iter(|| {
                let seeds: Vec<u64> = (0..16).map(|t| derive_seed(1, &[3, t])).collect();
                map_ordered(seeds, parallel, |seed| {
                    let cfg = TrainConfig { steps: 2000, seed, width: 64, ..TrainConfig::default() };
                    train_index(&arm, &fm, Algorithm::Neural, 3, &cfg).unwrap().final_lambda
                })
            })
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let net = TwoLayerReluNet::init(200, 8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let phi = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    c.bench_function("forward_m200", |b| b.iter(|| net.forward(black_box(&phi)).unwrap()));
    c.bench_function("grad_m200", |b| b.iter(|| net.grad(black_box(&phi)).unwrap()));
}

criterion_group!(benches, trial_batch, network);
criterion_main!(benches);
