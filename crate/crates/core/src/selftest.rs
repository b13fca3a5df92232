//! Quick internal consistency checks, runnable from the CLI without the
//! test harness. Each check is small enough to finish in well under a second.

use crate::adapters::{init_adapter, loss_and_grad, model_forward, AdapterConfig, LowRankModel, Scheme};
use crate::analysis::{a_similarity, delta_m_percent, subspace_similarity, TaskScores};
use crate::fed::{comm_cost, Geometry, Strategy};
use crate::harness::Checkpoint;
use crate::matcore::{Matrix, RngStream};
use crate::tasks::Sample;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn mean_loss<M: LowRankModel>(model: &M, w0: &Matrix, batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|s| {
            let y = model_forward(model, w0, &s.x).expect("shapes checked").y;
            y.iter().zip(&s.y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Largest relative gap between analytic gradients and central differences
/// (step 1e-5) over every parameter entry, with denominator
/// `max(|analytic|, |numeric|, 1e-6)`.
pub fn fd_max_rel_error<M: LowRankModel>(model: &M, w0: &Matrix, batch: &[Sample]) -> crate::Result<f64> {
    let h = 1e-5;
    let (_, grads) = loss_and_grad(model, w0, batch.iter())?;
    let mut worst: f64 = 0.0;
    for (p, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let mut plus = model.clone();
            plus.params_mut()[p].as_mut_slice()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[p].as_mut_slice()[k] -= h;
            let numeric = (mean_loss(&plus, w0, batch) - mean_loss(&minus, w0, batch)) / (2.0 * h);
            let analytic = grad.as_slice()[k];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
    }
    Ok(worst)
}

fn gradients() -> Check {
    let mut worst: f64 = 0.0;
    for scheme in [Scheme::Vanilla, Scheme::SharingA, Scheme::ALoRA] {
        for seed in 0..5 {
            let mut rng = RngStream::new(seed);
            let cfg = AdapterConfig::new(scheme, 6, 5, 2, 3);
            let mut st = init_adapter(&cfg, &mut rng).expect("valid config");
            for m in st.params_mut() {
                *m = rng.gaussian_matrix(m.rows(), m.cols(), 0.5);
            }
            let w0 = rng.gaussian_matrix(5, 6, 0.5);
            let batch: Vec<Sample> = (0..3)
                .map(|_| Sample {
                    x: rng.gaussian_vector(6, 1.0),
                    y: rng.gaussian_vector(5, 1.0),
                    task: 0,
                })
                .collect();
            match fd_max_rel_error(&st, &w0, &batch) {
                Ok(e) => worst = worst.max(e),
                Err(e) => return check("gradients", false, e.to_string()),
            }
        }
    }
    check("gradients", worst < 1e-5, format!("max relative error {worst:.2e} (< 1e-5)"))
}

fn similarity() -> Check {
    let mut rng = RngStream::new(11);
    let u = rng.gaussian_matrix(32, 4, 1.0);
    let r = rng.gaussian_matrix(4, 4, 1.0);
    let a = rng.gaussian_matrix(4, 32, 1.0);
    let self_sim = subspace_similarity(&u, &u).unwrap_or(f64::NAN);
    let basis_change = subspace_similarity(&u, &u.matmul(&r).expect("shapes")).unwrap_or(f64::NAN);
    let row_change = a_similarity(&a, &r.matmul(&a).expect("shapes")).unwrap_or(f64::NAN);
    let ok = [self_sim, basis_change, row_change].iter().all(|v| (v - 1.0).abs() < 1e-10);
    check(
        "similarity",
        ok,
        format!("self {self_sim:.12}, column basis change {basis_change:.12}, row basis change {row_change:.12}"),
    )
}

fn random_subspaces() -> Check {
    let (d, r, trials) = (64, 8, 100);
    let mut rng = RngStream::new(21);
    let mut total = 0.0;
    for _ in 0..trials {
        let a = rng.gaussian_matrix(d, r, 1.0);
        let b = rng.gaussian_matrix(d, r, 1.0);
        total += subspace_similarity(&a, &b).unwrap_or(f64::NAN);
    }
    let mean = total / trials as f64;
    let expected = r as f64 / d as f64;
    check(
        "random subspaces",
        (mean - expected).abs() < 0.02,
        format!("mean {mean:.4} vs r/d = {expected:.4}"),
    )
}

fn communication() -> Check {
    let rows = comm_cost(Geometry::llama2_7b_qv(), &[8; 8], 16);
    let get = |s: Strategy| rows.iter().find(|c| c.strategy == s).map(|c| c.millions()).unwrap_or(f64::NAN);
    let fedit = get(Strategy::FedIT);
    let fedsa = get(Strategy::FedSA);
    let ok = (fedit - 8.388608).abs() < 1e-9 && (fedsa - 4.194304).abs() < 1e-9;
    check("communication", ok, format!("fedit {fedit:.2}M, fedsa {fedsa:.2}M"))
}

fn delta_m() -> Check {
    let single = vec![78.84, 90.70, 73.98, 95.33, 85.80, 89.77, 81.06, 85.64];
    let lora = vec![77.39, 88.13, 73.61, 94.21, 84.20, 87.49, 79.53, 86.11];
    let dm = TaskScores::new(lora, single, vec![true; 8]).map(|s| delta_m_percent(&s));
    match dm {
        Ok(v) => check("delta_m", (v - 1.51).abs() < 0.005, format!("{v:.4} (expect 1.51)")),
        Err(e) => check("delta_m", false, e.to_string()),
    }
}

fn checkpoint_round_trip() -> Check {
    let mut rng = RngStream::new(5);
    let cfg = AdapterConfig::new(Scheme::ALoRA, 8, 6, 2, 3);
    let st = init_adapter(&cfg, &mut rng).expect("valid config");
    let ck = Checkpoint {
        tag: "adapter/alora".into(),
        round: 0,
        epoch: 1,
        step: 2,
        batch: 3,
        rng_seed: 4,
        rng_cursor: u128::MAX - 5,
        records: st
            .factors
            .names()
            .into_iter()
            .zip(st.factors.matrices().into_iter().cloned())
            .collect(),
    };
    let bytes = ck.encode();
    let ok = matches!(Checkpoint::decode(&bytes), Ok(back) if back == ck);
    check("checkpoint", ok, format!("{} bytes", bytes.len()))
}

/// Runs every check in a fixed order.
pub fn run_all() -> Vec<Check> {
    vec![
        gradients(),
        similarity(),
        random_subspaces(),
        communication(),
        delta_m(),
        checkpoint_round_trip(),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
