use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{norm, Matrix, RngStream};

/// One regression example. `task` is the index of the generating task.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub task: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// All tasks share `B*`; `A*_k` drawn independently.
    SharedB,
    /// All tasks share `A*`; `B*_k` drawn independently.
    SharedA,
    Independent,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::SharedB => "shared_b",
            Family::SharedA => "shared_a",
            Family::Independent => "independent",
        }
    }
}

/// Generation parameters. Everything about a suite is a pure function of this
/// struct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_tasks: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub true_rank: usize,
    pub family: Family,
    /// Standard deviation of the additive target noise.
    pub noise: f64,
    pub samples_per_task: usize,
    /// Norm of each task's input mean, relative to `sqrt(d_in)`. Gives the
    /// router something to key on; 0 makes every task's inputs identically
    /// distributed.
    pub input_shift: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_tasks: 3,
            d_in: 64,
            d_out: 64,
            true_rank: 4,
            family: Family::SharedB,
            noise: 0.01,
            samples_per_task: 400,
            input_shift: 1.0,
            seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_tasks == 0 {
            problems.push("n_tasks must be >= 1".to_string());
        }
        if self.d_in == 0 || self.d_out == 0 {
            problems.push("d_in and d_out must be positive".to_string());
        }
        if self.true_rank == 0 || self.true_rank > self.d_in.min(self.d_out) {
            problems.push(format!(
                "true_rank {} must lie in [1, min(d_in, d_out) = {}]",
                self.true_rank,
                self.d_in.min(self.d_out)
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            problems.push("noise must be a finite non-negative value".to_string());
        }
        if self.samples_per_task < 5 {
            problems.push("samples_per_task must be >= 5 for an 80/20 split".to_string());
        }
        if !(self.input_shift >= 0.0 && self.input_shift.is_finite()) {
            problems.push("input_shift must be finite and non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Number of training samples per task; the remaining 20% are test.
    pub fn train_len(&self) -> usize {
        self.samples_per_task * 4 / 5
    }
}

#[derive(Clone, Debug)]
pub struct TaskData {
    pub a_star: Matrix,
    pub b_star: Matrix,
    pub input_mean: Vec<f64>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskData {
    /// Ground-truth update `B* A*`.
    pub fn true_delta(&self) -> Matrix {
        self.b_star.matmul(&self.a_star).expect("conformant by construction")
    }
}

/// Frozen base weight plus per-task low-rank ground truth and data:
/// `y = (W0 + B*_k A*_k) x + ε`, `x = μ_k + ξ`, `ξ ~ N(0, I)`, `ε ~ N(0, σ²I)`.
#[derive(Clone, Debug)]
pub struct SyntheticSuite {
    pub config: SuiteConfig,
    pub w0: Matrix,
    pub tasks: Vec<TaskData>,
}

impl SyntheticSuite {
    pub fn train_union(&self) -> Vec<Sample> {
        self.tasks.iter().flat_map(|t| t.train.iter().cloned()).collect()
    }

    pub fn test_union(&self) -> Vec<Sample> {
        self.tasks.iter().flat_map(|t| t.test.iter().cloned()).collect()
    }
}

/// Entries `N(0, 1/d_in)` for `A*` and `W0`, `N(0, 1/r*)` for `B*`, so the
/// perturbation has roughly unit per-coordinate variance on whitened inputs.
pub fn gen_suite(cfg: &SuiteConfig) -> Result<SyntheticSuite> {
    cfg.validate()?;
    let (d_in, d_out, r) = (cfg.d_in, cfg.d_out, cfg.true_rank);
    let a_std = 1.0 / (d_in as f64).sqrt();
    let b_std = 1.0 / (r as f64).sqrt();

    let w0 = RngStream::derive(cfg.seed, "suite/base", 0, 0).gaussian_matrix(d_out, d_in, a_std);
    let mut shared = RngStream::derive(cfg.seed, "suite/shared", 0, 0);
    let shared_a = shared.gaussian_matrix(r, d_in, a_std);
    let shared_b = shared.gaussian_matrix(d_out, r, b_std);

    let tasks = (0..cfg.n_tasks)
        .map(|k| gen_task(cfg, k, &w0, &shared_a, &shared_b))
        .collect();
    Ok(SyntheticSuite {
        config: cfg.clone(),
        w0,
        tasks,
    })
}

fn gen_task(cfg: &SuiteConfig, k: usize, w0: &Matrix, shared_a: &Matrix, shared_b: &Matrix) -> TaskData {
    let (d_in, d_out, r) = (cfg.d_in, cfg.d_out, cfg.true_rank);
    let mut truth = RngStream::derive(cfg.seed, "suite/truth", k as u64, 0);
    let own_a = truth.gaussian_matrix(r, d_in, 1.0 / (d_in as f64).sqrt());
    let own_b = truth.gaussian_matrix(d_out, r, 1.0 / (r as f64).sqrt());
    let (a_star, b_star) = match cfg.family {
        Family::SharedB => (own_a, shared_b.clone()),
        Family::SharedA => (shared_a.clone(), own_b),
        Family::Independent => (own_a, own_b),
    };

    let mut direction = truth.gaussian_vector(d_in, 1.0);
    let n = norm(&direction);
    let target_norm = cfg.input_shift * (d_in as f64).sqrt();
    direction.iter_mut().for_each(|v| *v *= target_norm / n);
    let input_mean = direction;

    let full = w0.add(&b_star.matmul(&a_star).expect("conformant")).expect("same shape");
    let mut data_rng = RngStream::derive(cfg.seed, "suite/data", k as u64, 0);
    let samples: Vec<Sample> = (0..cfg.samples_per_task)
        .map(|_| {
            let x: Vec<f64> = input_mean.iter().map(|m| m + data_rng.normal()).collect();
            let mut y = full.matvec(&x).expect("conformant");
            for yi in &mut y {
                *yi += cfg.noise * data_rng.normal();
            }
            Sample { x, y, task: k }
        })
        .collect();
    let split = cfg.train_len();
    let test = samples[split..].to_vec();
    let mut train = samples;
    train.truncate(split);
    TaskData {
        a_star,
        b_star,
        input_mean,
        train,
        test,
    }
}
