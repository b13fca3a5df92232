use serde::{Deserialize, Serialize};

use crate::adapters::{init_adapter, loss_and_grad, model_forward, AdapterConfig, AdapterState, LowRankModel, Scheme};
use crate::error::{Error, Result};
use crate::matcore::{Matrix, RngStream};

use super::{Sample, SyntheticSuite};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the mini-batch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::adam(),
            lr: 1e-2,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                problems.push("adam betas must lie in [0, 1)".to_string());
            }
            if eps <= 0.0 {
                problems.push("adam eps must be positive".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// First/second moment buffers, one per parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(shapes: &[&Matrix]) -> Self {
        let zeros = || shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        OptimizerState {
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn apply(&mut self, opt: Optimizer, lr: f64, params: &mut [&mut Matrix], grads: &[Matrix]) {
        self.step += 1;
        match opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.axpy(-lr, g).expect("gradient mirrors parameter");
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Everything a step hook may inspect. Fired before the update is applied.
pub struct StepEvent<'a, M> {
    /// 1-based index of the step about to be taken.
    pub step: u64,
    pub epoch: usize,
    pub model: &'a M,
    pub batch: &'a [&'a Sample],
    pub grads: &'a [Matrix],
    pub loss: f64,
}

/// Optional callbacks during training.
pub trait StepObserver<M> {
    fn before_update(&mut self, _event: &StepEvent<'_, M>) {}
    /// Called after every update with the full resumable state.
    fn after_update(&mut self, _session: &TrainSession<M>) {}
}

pub struct NoObserver;
impl<M> StepObserver<M> for NoObserver {}

/// Resumable training loop: the model, optimizer moments, shuffle stream and
/// counters fully determine the continuation.
///
/// `rng` is the shuffle stream as it stood at the start of the epoch in
/// progress, and `batches_done` counts the mini-batches of that epoch already
/// applied. Resuming re-draws the same permutation and skips those batches, so
/// a session can be checkpointed after any step.
#[derive(Clone, Debug)]
pub struct TrainSession<M> {
    pub model: M,
    pub optimizer: OptimizerState,
    pub rng: RngStream,
    pub epoch: usize,
    pub batches_done: usize,
    pub config: TrainConfig,
}

impl<M: LowRankModel> TrainSession<M> {
    pub fn new(model: M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model.params());
        Ok(TrainSession {
            rng: RngStream::new(config.seed),
            model,
            optimizer,
            epoch: 0,
            batches_done: 0,
            config,
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Finishes the current pass over `data` in shuffled mini-batches.
    /// Returns the mean loss (evaluated before each update) of the batches run
    /// by this call.
    pub fn run_epoch(&mut self, w0: &Matrix, data: &[Sample], observer: &mut dyn StepObserver<M>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty { op: "train" });
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = self.rng.clone();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size).skip(self.batches_done) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = loss_and_grad(&self.model, w0, batch.iter().copied())?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    step: self.optimizer.step + 1,
                    epoch: self.epoch,
                });
            }
            observer.before_update(&StepEvent {
                step: self.optimizer.step + 1,
                epoch: self.epoch,
                model: &self.model,
                batch: &batch,
                grads: &grads,
                loss,
            });
            let mut params = self.model.params_mut();
            self.optimizer
                .apply(self.config.optimizer, self.config.lr, &mut params, &grads);
            self.batches_done += 1;
            total += loss;
            batches += 1;
            observer.after_update(self);
        }
        self.rng = rng;
        self.epoch += 1;
        self.batches_done = 0;
        Ok(if batches == 0 { f64::NAN } else { total / batches as f64 })
    }

    /// Runs until `config.epochs` epochs have completed.
    pub fn run_to_end(&mut self, w0: &Matrix, data: &[Sample], observer: &mut dyn StepObserver<M>) -> Result<Vec<f64>> {
        let mut curve = Vec::new();
        while self.epoch < self.config.epochs {
            curve.push(self.run_epoch(w0, data, observer)?);
        }
        Ok(curve)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Trains `model` on `data` for `cfg.epochs` epochs. `w0` is only read.
pub fn train<M: LowRankModel>(model: M, w0: &Matrix, data: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome<M>> {
    train_observed(model, w0, data, cfg, &mut NoObserver)
}

pub fn train_observed<M: LowRankModel>(
    model: M,
    w0: &Matrix,
    data: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn StepObserver<M>,
) -> Result<TrainOutcome<M>> {
    let mut session = TrainSession::new(model, cfg.clone())?;
    let loss_curve = session.run_to_end(w0, data, observer)?;
    Ok(TrainOutcome {
        model: session.model,
        loss_curve,
    })
}

/// Mean over samples of `‖f(x) - y‖² / d_out`.
pub fn evaluate<M: LowRankModel>(model: &M, w0: &Matrix, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let d_out = model.d_out() as f64;
    let mut total = 0.0;
    for s in data {
        let f = model_forward(model, w0, &s.x)?;
        total += f.y.iter().zip(&s.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d_out;
    }
    Ok(total / data.len() as f64)
}

/// One independently trained vanilla adapter per task, scored by test MSE.
/// The adapter config's scheme is forced to vanilla.
pub fn single_task_baselines(suite: &SyntheticSuite, adapter: &AdapterConfig, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let acfg = AdapterConfig {
        scheme: Scheme::Vanilla,
        n_experts: 1,
        ..*adapter
    };
    suite
        .tasks
        .iter()
        .enumerate()
        .map(|(k, task)| {
            let init = init_adapter(&acfg, &mut RngStream::derive(cfg.seed, "baseline/init", k as u64, 0))?;
            let tcfg = cfg.with_seed(crate::matcore::derive_seed(cfg.seed, "baseline/shuffle", k as u64, 0));
            let out = train(init, &suite.w0, &task.train, &tcfg)?;
            evaluate(&out.model, &suite.w0, &task.test)
        })
        .collect()
}

/// Convenience: init + train an adapter on a dataset.
pub fn fit_adapter(
    acfg: &AdapterConfig,
    init_seed: u64,
    w0: &Matrix,
    data: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<AdapterState>> {
    let init = init_adapter(acfg, &mut RngStream::new(init_seed))?;
    train(init, w0, data, cfg)
}
