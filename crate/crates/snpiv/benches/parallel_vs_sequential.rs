//! Compares the rayon-backed kernels against the sequential fallback.
//! Run with `cargo bench` (parallel) or `cargo bench --no-default-features`
//! to build without rayon entirely.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snpiv::contrastive;
use snpiv::features::{oracle_factorization, MlpFeatures, Side, DEFAULT_WIDTHS};
use snpiv::operator::Grid;
use snpiv::synthetic::{build_scenario, rejection_sample, Scenario};
use std::sync::Arc;

fn scenario() -> Scenario {
    Scenario {
        d: 11,
        c_sigma: 0.5,
        c_alpha: 0.5,
        sigma_head: 1.0,
        noise_var: 0.1,
        seed_op: 7,
        seed_data: 7,
    }
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn bench_rejection_sample(c: &mut Criterion) {
    let (op, _) = build_scenario(&scenario()).unwrap();
    let op = Arc::new(op);
    let mut group = c.benchmark_group("rejection_sample_20k");
    for (label, seq) in modes() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            snpiv::par::force_sequential(seq);
            b.iter(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                rejection_sample(&op, 20_000, &mut rng).unwrap()
            });
        });
    }
    snpiv::par::force_sequential(false);
    group.finish();
}

fn bench_population_loss(c: &mut Criterion) {
    let (op, _) = build_scenario(&scenario()).unwrap();
    let op = Arc::new(op);
    let (phi, psi) = oracle_factorization(&op, 10);
    let grid = Grid::new(1024);
    let mut group = c.benchmark_group("population_loss_1024");
    for (label, seq) in modes() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            snpiv::par::force_sequential(seq);
            b.iter(|| contrastive::population_loss_quadrature(&phi, &psi, &op, &grid));
        });
    }
    snpiv::par::force_sequential(false);
    group.finish();
}

fn bench_batch_loss(c: &mut Criterion) {
    let (op, _) = build_scenario(&scenario()).unwrap();
    let op = Arc::new(op);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = rejection_sample(&op, 1024, &mut rng).unwrap();
    let phi = MlpFeatures::init(&DEFAULT_WIDTHS, Side::X, &mut rng);
    let psi = MlpFeatures::init(&DEFAULT_WIDTHS, Side::Z, &mut rng);
    let mut group = c.benchmark_group("empirical_loss_1024");
    for (label, seq) in modes() {
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            snpiv::par::force_sequential(seq);
            b.iter(|| contrastive::empirical_loss(&phi, &psi, &batch).unwrap());
        });
    }
    snpiv::par::force_sequential(false);
    group.finish();
}

criterion_group!(
    benches,
    bench_rejection_sample,
    bench_population_loss,
    bench_batch_loss
);
criterion_main!(benches);
