//! Training-loop oracles: convergence on realizable data, the zero-adapter
//! error against a Monte Carlo estimate, and the multi-task scheme ordering.

use alora_core::adapters::{init_adapter, AdapterConfig, Scheme};
use alora_core::tasks::{evaluate, gen_suite, single_task_baselines, train, Family, SuiteConfig, TrainConfig};
use alora_core::{Matrix, RngStream};

fn noiseless(n_tasks: usize, seed: u64) -> alora_core::tasks::SyntheticSuite {
    gen_suite(&SuiteConfig {
        n_tasks,
        d_in: 16,
        d_out: 16,
        true_rank: 2,
        noise: 0.0,
        samples_per_task: 200,
        seed,
        ..SuiteConfig::default()
    })
    .unwrap()
}

/// Documented convergence setting: Adam, lr 1e-2, batch 32.
fn convergence_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn realizable_task_converges_within_500_epochs() {
    let suite = noiseless(1, 4);
    let cfg = AdapterConfig::new(Scheme::Vanilla, 16, 16, 2, 1);
    let init = init_adapter(&cfg, &mut RngStream::new(1)).unwrap();
    let out = train(init, &suite.w0, &suite.tasks[0].train, &convergence_cfg(500)).unwrap();
    let mse = evaluate(&out.model, &suite.w0, &suite.tasks[0].train).unwrap();
    assert!(mse < 1e-4, "final train MSE {mse:e}");
    assert_eq!(out.loss_curve.len(), 500);
}

#[test]
fn noiseless_baselines_are_small() {
    let suite = noiseless(3, 8);
    let cfg = AdapterConfig::new(Scheme::Vanilla, 16, 16, 2, 1);
    let m0 = single_task_baselines(&suite, &cfg, &convergence_cfg(500)).unwrap();
    assert_eq!(m0.len(), 3);
    for v in &m0 {
        assert!(*v < 1e-3, "baseline {v:e}");
    }
}

#[test]
fn zero_adapter_error_matches_monte_carlo() {
    let suite = gen_suite(&SuiteConfig {
        n_tasks: 1,
        d_in: 12,
        d_out: 10,
        true_rank: 3,
        noise: 0.0,
        samples_per_task: 2000,
        input_shift: 0.0,
        seed: 2,
        ..SuiteConfig::default()
    })
    .unwrap();
    // The vanilla init has B = 0, so the adapter contributes nothing.
    let cfg = AdapterConfig::new(Scheme::Vanilla, 12, 10, 2, 1);
    let st = init_adapter(&cfg, &mut RngStream::new(3)).unwrap();
    let before = st.clone();
    let got = evaluate(&st, &suite.w0, &suite.tasks[0].train).unwrap();
    assert_eq!(st, before);

    // Independent estimate of E|dW x|^2 / d_out with fresh standard normal x.
    let delta: Matrix = suite.tasks[0].true_delta();
    let mut rng = RngStream::new(99);
    let trials = 20_000;
    let mut acc = 0.0;
    for _ in 0..trials {
        let x = rng.gaussian_vector(12, 1.0);
        acc += delta.matvec(&x).unwrap().iter().map(|v| v * v).sum::<f64>() / 10.0;
    }
    let mc = acc / trials as f64;
    // Closed form for standard normal inputs: |dW|_F^2 / d_out.
    let exact = delta.frobenius_norm().powi(2) / 10.0;
    assert!((mc - exact).abs() / exact < 0.03, "mc {mc} exact {exact}");
    assert!((got - exact).abs() / exact < 0.1, "evaluate {got} exact {exact}");
}

#[test]
fn alora_matches_or_beats_sharing_a_on_shared_b() {
    let mut wins = 0;
    let mut log = Vec::new();
    for seed in 0..10u64 {
        let suite = gen_suite(&SuiteConfig {
            n_tasks: 3,
            family: Family::SharedB,
            seed,
            ..SuiteConfig::default()
        })
        .unwrap();
        let tc = TrainConfig {
            lr: 1e-2,
            epochs: 30,
            seed,
            ..TrainConfig::default()
        };
        let mut mse = Vec::new();
        for scheme in [Scheme::SharingA, Scheme::ALoRA] {
            let cfg = AdapterConfig::new(scheme, 64, 64, 4, 3);
            let init = init_adapter(&cfg, &mut RngStream::new(200 + seed)).unwrap();
            let out = train(init, &suite.w0, &suite.train_union(), &tc).unwrap();
            mse.push(evaluate(&out.model, &suite.w0, &suite.test_union()).unwrap());
        }
        assert_eq!(
            AdapterConfig::new(Scheme::SharingA, 64, 64, 4, 3).trainable_count(),
            AdapterConfig::new(Scheme::ALoRA, 64, 64, 4, 3).trainable_count()
        );
        wins += usize::from(mse[1] <= mse[0]);
        log.push(format!("seed {seed}: sharing_a {:.3e} alora {:.3e}", mse[0], mse[1]));
    }
    assert!(wins >= 8, "ALoRA <= SharingA in {wins}/10 seeds\n{}", log.join("\n"));
}
