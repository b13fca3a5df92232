#![allow(dead_code)]

use alora_core::adapters::{init_adapter, loss_and_grad, AdapterConfig, AdapterState, LowRankModel, Scheme};
use alora_core::tasks::Sample;
use alora_core::{Matrix, RngStream};

/// Random adapter with every matrix (B side included) drawn Gaussian, a random
/// base weight and a random regression batch.
pub fn random_instance(
    scheme: Scheme,
    d_in: usize,
    d_out: usize,
    rank: usize,
    n: usize,
    batch: usize,
    seed: u64,
) -> (AdapterState, Matrix, Vec<Sample>) {
    let mut rng = RngStream::new(seed);
    let cfg = AdapterConfig::new(scheme, d_in, d_out, rank, n);
    let mut st = init_adapter(&cfg, &mut rng).unwrap();
    for m in st.params_mut() {
        *m = rng.gaussian_matrix(m.rows(), m.cols(), 0.5);
    }
    let w0 = rng.gaussian_matrix(d_out, d_in, 0.5);
    let samples = (0..batch)
        .map(|_| Sample {
            x: rng.gaussian_vector(d_in, 1.0),
            y: rng.gaussian_vector(d_out, 1.0),
            task: 0,
        })
        .collect();
    (st, w0, samples)
}

/// Loss evaluated through the forward pass only.
fn batch_loss<M: LowRankModel>(model: &M, w0: &Matrix, batch: &[Sample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let y = alora_core::adapters::model_forward(model, w0, &s.x).unwrap().y;
        total += y.iter().zip(&s.y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64;
    }
    total / batch.len() as f64
}

/// Largest relative error between analytic gradients and central differences
/// (step 1e-5) over every parameter entry. The relative error uses
/// `max(|analytic|, |numeric|, 1e-6)` as denominator so entries with a
/// vanishing gradient are judged on absolute error.
pub fn finite_difference_max_rel_error<M: LowRankModel>(model: &M, w0: &Matrix, batch: &[Sample]) -> f64 {
    let h = 1e-5;
    let (_, grads) = loss_and_grad(model, w0, batch.iter()).unwrap();
    let mut worst: f64 = 0.0;
    for (p, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[p].as_mut_slice()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].as_mut_slice()[k] -= h;
            let numeric = (batch_loss(&plus, w0, batch) - batch_loss(&minus, w0, batch)) / (2.0 * h);
            let analytic = grad.as_slice()[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}
