use std::hint::black_box;

use alora_bench::{default_suite, trained_like};
use alora_core::adapters::Scheme;
use alora_core::analysis::subspace_similarity;
use alora_core::fed::{ClientData, FedConfig, Federation, Strategy};
use alora_core::matcore::svd_thin;
use alora_core::tasks::TrainConfig;
use alora_core::RngStream;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn forward(c: &mut Criterion) {
    let suite = default_suite(0);
    let x = suite.tasks[0].train[0].x.clone();
    let mut g = c.benchmark_group("forward");
    for scheme in [Scheme::Vanilla, Scheme::SharingA, Scheme::ALoRA] {
        let st = trained_like(scheme, 64, 8, 3, 1);
        g.bench_function(BenchmarkId::from_parameter(scheme.name()), |b| {
            b.iter(|| st.forward(black_box(&suite.w0), black_box(&x)).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let suite = default_suite(0);
    let batch = &suite.tasks[0].train[..32];
    let mut g = c.benchmark_group("grad_batch32");
    for scheme in [Scheme::Vanilla, Scheme::SharingA, Scheme::ALoRA] {
        let st = trained_like(scheme, 64, 8, 3, 1);
        g.bench_function(BenchmarkId::from_parameter(scheme.name()), |b| {
            b.iter(|| st.grad(black_box(&suite.w0), black_box(batch)).unwrap())
        });
    }
    g.finish();
}

fn linalg(c: &mut Criterion) {
    let mut rng = RngStream::new(3);
    let m = rng.gaussian_matrix(64, 64, 1.0);
    let u = rng.gaussian_matrix(64, 8, 1.0);
    let v = rng.gaussian_matrix(64, 8, 1.0);
    c.bench_function("svd_thin_64x64", |b| b.iter(|| svd_thin(black_box(&m)).unwrap()));
    c.bench_function("subspace_similarity_64x8", |b| {
        b.iter(|| subspace_similarity(black_box(&u), black_box(&v)).unwrap())
    });
}

fn fed_round(c: &mut Criterion) {
    let suite = default_suite(0);
    let data: Vec<ClientData> = suite
        .tasks
        .iter()
        .map(|t| ClientData {
            train: t.train.clone(),
            test: t.test.clone(),
        })
        .collect();
    let n = data.len();
    let mut g = c.benchmark_group("fed_round");
    g.sample_size(10);
    for (strategy, ranks) in [
        (Strategy::FedALoRAHomog, vec![4; n]),
        (Strategy::FedALoRAHetero, (0..n).map(|i| 2 + 2 * i).collect()),
    ] {
        let cfg = FedConfig {
            n_clients: n,
            rounds: 1,
            strategy,
            ranks,
            d_m: 4,
            weights: None,
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            seed: 0,
        };
        g.bench_function(BenchmarkId::from_parameter(strategy.name()), |b| {
            b.iter(|| {
                let mut fed = Federation::new(cfg.clone(), suite.w0.clone()).unwrap();
                fed.run_round(&data).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, gradient, linalg, fed_round);
criterion_main!(benches);
