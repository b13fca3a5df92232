//! Adapter architectures: vanilla LoRA, sharing-A (one `A`, many routed `B`
//! experts) and ALoRA sharing-B (many routed `A` experts, one `B`).
//!
//! All three implement [`LowRankModel`], the interface the training loop and
//! the federated engine drive. Gradients are analytic; the integration tests
//! check them against central finite differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{dot, kaiming_uniform, softmax, Matrix, RngStream};
use crate::tasks::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Vanilla,
    SharingA,
    #[serde(rename = "alora")]
    ALoRA,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Vanilla => "vanilla",
            Scheme::SharingA => "sharing_a",
            Scheme::ALoRA => "alora",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        match s {
            "vanilla" => Some(Scheme::Vanilla),
            "sharing_a" => Some(Scheme::SharingA),
            "alora" => Some(Scheme::ALoRA),
            _ => None,
        }
    }

    pub fn is_routed(self) -> bool {
        !matches!(self, Scheme::Vanilla)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
    pub n_experts: usize,
    pub scheme: Scheme,
    /// Multiplier on the adapter branch (the usual `alpha / r`); 1 by default.
    pub scaling: f64,
}

impl AdapterConfig {
    pub fn new(scheme: Scheme, d_in: usize, d_out: usize, rank: usize, n_experts: usize) -> Self {
        AdapterConfig {
            d_in,
            d_out,
            rank,
            n_experts: if scheme == Scheme::Vanilla { 1 } else { n_experts },
            scheme,
            scaling: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.d_in == 0 || self.d_out == 0 {
            problems.push(format!("dims must be positive ({}x{})", self.d_out, self.d_in));
        }
        if self.rank == 0 || self.rank > self.d_in.min(self.d_out) {
            problems.push(format!(
                "rank {} must lie in [1, min(d_in, d_out) = {}]",
                self.rank,
                self.d_in.min(self.d_out)
            ));
        }
        if self.n_experts == 0 {
            problems.push("n_experts must be >= 1".into());
        }
        if self.scheme == Scheme::Vanilla && self.n_experts != 1 {
            problems.push(format!("vanilla scheme needs n_experts = 1, got {}", self.n_experts));
        }
        if !self.scaling.is_finite() {
            problems.push("scaling must be finite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Number of trainable scalars, router included.
    pub fn trainable_count(&self) -> usize {
        let (d_in, d_out, r, n) = (self.d_in, self.d_out, self.rank, self.n_experts);
        match self.scheme {
            Scheme::Vanilla => r * d_in + d_out * r,
            Scheme::SharingA => r * d_in + n * d_out * r + n * d_in,
            Scheme::ALoRA => n * r * d_in + d_out * r + n * d_in,
        }
    }
}

/// Scheme-tagged parameter set. Also used, with identical shapes, to carry
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub enum Factors {
    Vanilla {
        a: Matrix,
        b: Matrix,
    },
    SharingA {
        a: Matrix,
        b: Vec<Matrix>,
        gate: Matrix,
    },
    ALoRA {
        a: Vec<Matrix>,
        b: Matrix,
        gate: Matrix,
    },
}

impl Factors {
    pub fn scheme(&self) -> Scheme {
        match self {
            Factors::Vanilla { .. } => Scheme::Vanilla,
            Factors::SharingA { .. } => Scheme::SharingA,
            Factors::ALoRA { .. } => Scheme::ALoRA,
        }
    }

    /// Matrices in canonical order: A-side, B-side, router.
    pub fn matrices(&self) -> Vec<&Matrix> {
        match self {
            Factors::Vanilla { a, b } => vec![a, b],
            Factors::SharingA { a, b, gate } => {
                std::iter::once(a).chain(b.iter()).chain(std::iter::once(gate)).collect()
            }
            Factors::ALoRA { a, b, gate } => a.iter().chain([b, gate]).collect(),
        }
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Factors::Vanilla { a, b } => vec![a, b],
            Factors::SharingA { a, b, gate } => std::iter::once(a)
                .chain(b.iter_mut())
                .chain(std::iter::once(gate))
                .collect(),
            Factors::ALoRA { a, b, gate } => {
                a.iter_mut().chain([b, gate]).collect()
            }
        }
    }

    pub fn names(&self) -> Vec<String> {
        match self {
            Factors::Vanilla { .. } => vec!["A".into(), "B".into()],
            Factors::SharingA { b, .. } => std::iter::once("A".to_string())
                .chain((0..b.len()).map(|i| format!("B{i}")))
                .chain(std::iter::once("W_g".to_string()))
                .collect(),
            Factors::ALoRA { a, .. } => (0..a.len())
                .map(|i| format!("A{i}"))
                .chain(["B".to_string(), "W_g".to_string()])
                .collect(),
        }
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Factors {
        let mut z = self.clone();
        for m in z.matrices_mut() {
            m.fill(0.0);
        }
        z
    }

    /// Rebuilds a `Factors` of this structure from matrices in canonical order.
    pub fn with_matrices(&self, mats: Vec<Matrix>) -> Result<Factors> {
        let mut out = self.clone();
        let slots = out.matrices_mut();
        if slots.len() != mats.len() {
            return Err(Error::shape(
                "Factors::with_matrices",
                format!("expected {} matrices, got {}", slots.len(), mats.len()),
            ));
        }
        for (slot, m) in slots.into_iter().zip(mats) {
            if slot.shape() != m.shape() {
                return Err(Error::shape(
                    "Factors::with_matrices",
                    format!("{:?} vs {:?}", slot.shape(), m.shape()),
                ));
            }
            *slot = m;
        }
        Ok(out)
    }

    /// The shared-side matrix: `A` for sharing-A, `B` otherwise.
    pub fn shared(&self) -> &Matrix {
        match self {
            Factors::Vanilla { b, .. } | Factors::ALoRA { b, .. } => b,
            Factors::SharingA { a, .. } => a,
        }
    }

    pub fn gate(&self) -> Option<&Matrix> {
        match self {
            Factors::Vanilla { .. } => None,
            Factors::SharingA { gate, .. } | Factors::ALoRA { gate, .. } => Some(gate),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterState {
    pub config: AdapterConfig,
    pub factors: Factors,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub y: Vec<f64>,
    /// Router weights; `None` for vanilla.
    pub gate: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct GradBundle {
    /// Batch-mean MSE at the evaluated parameters.
    pub loss: f64,
    pub grads: Factors,
}

/// A-side matrices Kaiming-uniform, B-side zero, router Kaiming-uniform.
pub fn init_adapter(cfg: &AdapterConfig, rng: &mut RngStream) -> Result<AdapterState> {
    cfg.validate()?;
    let (d_in, d_out, r, n) = (cfg.d_in, cfg.d_out, cfg.rank, cfg.n_experts);
    let factors = match cfg.scheme {
        Scheme::Vanilla => Factors::Vanilla {
            a: kaiming_uniform(r, d_in, rng)?,
            b: Matrix::zeros(d_out, r),
        },
        Scheme::SharingA => {
            let a = kaiming_uniform(r, d_in, rng)?;
            Factors::SharingA {
                a,
                b: (0..n).map(|_| Matrix::zeros(d_out, r)).collect(),
                gate: kaiming_uniform(n, d_in, rng)?,
            }
        }
        Scheme::ALoRA => {
            let a = (0..n)
                .map(|_| kaiming_uniform(r, d_in, rng))
                .collect::<Result<Vec<_>>>()?;
            Factors::ALoRA {
                a,
                b: Matrix::zeros(d_out, r),
                gate: kaiming_uniform(n, d_in, rng)?,
            }
        }
    };
    Ok(AdapterState {
        config: *cfg,
        factors,
    })
}

/// Interface between a parameterized low-rank update and the generic training
/// and federated machinery.
///
/// `y = W0 x + delta(x)`; gradients are accumulated one sample at a time given
/// the output gradient `g = dL/dy`.
pub trait LowRankModel: Clone + Send + Sync {
    /// Per-sample intermediates shared by the forward and backward passes.
    type Cache;

    fn d_in(&self) -> usize;
    fn d_out(&self) -> usize;
    fn scheme_tag(&self) -> String;
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    /// Adapter contribution to the output plus router weights when routed.
    fn delta_forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>, Self::Cache);

    /// Adds this sample's gradient (scaled by `weight`) into `grads`, which
    /// follow `params()` order.
    fn accumulate_grad(&self, x: &[f64], g: &[f64], cache: &Self::Cache, weight: f64, grads: &mut [Matrix]);

    fn zero_grads(&self) -> Vec<Matrix> {
        self.params().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect()
    }
}

fn check_input<M: LowRankModel>(model: &M, w0: &Matrix, x: &[f64]) -> Result<()> {
    if w0.shape() != (model.d_out(), model.d_in()) {
        return Err(Error::shape(
            "forward",
            format!(
                "W0 is {}x{}, adapter expects {}x{}",
                w0.rows(),
                w0.cols(),
                model.d_out(),
                model.d_in()
            ),
        ));
    }
    if x.len() != model.d_in() {
        return Err(Error::shape(
            "forward",
            format!("input length {} != d_in {}", x.len(), model.d_in()),
        ));
    }
    Ok(())
}

/// `y = W0 x + delta(x)`.
pub fn model_forward<M: LowRankModel>(model: &M, w0: &Matrix, x: &[f64]) -> Result<Forward> {
    check_input(model, w0, x)?;
    let mut y = w0.matvec(x)?;
    let (dy, gate, _) = model.delta_forward(x);
    for (yi, di) in y.iter_mut().zip(&dy) {
        *yi += di;
    }
    Ok(Forward { y, gate })
}

/// Batch-mean MSE `‖y - t‖² / d_out` and its gradient w.r.t. every parameter,
/// in `params()` order.
pub fn loss_and_grad<'a, M, I>(model: &M, w0: &Matrix, batch: I) -> Result<(f64, Vec<Matrix>)>
where
    M: LowRankModel,
    I: IntoIterator<Item = &'a Sample>,
    I::IntoIter: ExactSizeIterator,
{
    let batch = batch.into_iter();
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty { op: "grad" });
    }
    let d_out = model.d_out() as f64;
    let inv_n = 1.0 / n as f64;
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for s in batch {
        check_input(model, w0, &s.x)?;
        if s.y.len() != model.d_out() {
            return Err(Error::shape("grad", "target length != d_out"));
        }
        let mut y = w0.matvec(&s.x)?;
        let (dy, _, cache) = model.delta_forward(&s.x);
        let mut g = Vec::with_capacity(y.len());
        for ((yi, di), ti) in y.iter_mut().zip(&dy).zip(&s.y) {
            *yi += di;
            let r = *yi - ti;
            loss += r * r;
            g.push(2.0 * r / d_out);
        }
        model.accumulate_grad(&s.x, &g, &cache, inv_n, &mut grads);
    }
    Ok((loss * inv_n / d_out, grads))
}

/// Per-sample cache for the adapter schemes.
#[derive(Debug, Default)]
pub struct AdapterCache {
    /// Vanilla / sharing-A: `u = A x`. ALoRA: concatenated `A_i x`.
    proj: Vec<Vec<f64>>,
    /// Sharing-A: `B_i u` per expert.
    expert_out: Vec<Vec<f64>>,
    /// ALoRA: `h = Σ w_i A_i x`.
    mixed: Vec<f64>,
    gate: Vec<f64>,
}

impl LowRankModel for AdapterState {
    type Cache = AdapterCache;

    fn d_in(&self) -> usize {
        self.config.d_in
    }

    fn d_out(&self) -> usize {
        self.config.d_out
    }

    fn scheme_tag(&self) -> String {
        self.config.scheme.name().to_string()
    }

    fn param_names(&self) -> Vec<String> {
        self.factors.names()
    }

    fn params(&self) -> Vec<&Matrix> {
        self.factors.matrices()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.factors.matrices_mut()
    }

    fn delta_forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>, AdapterCache) {
        let s = self.config.scaling;
        match &self.factors {
            Factors::Vanilla { a, b } => {
                let u = a.matvec(x).expect("checked dims");
                let dy = b.matvec(&u).expect("checked dims").into_iter().map(|v| s * v).collect();
                (
                    dy,
                    None,
                    AdapterCache {
                        proj: vec![u],
                        ..Default::default()
                    },
                )
            }
            Factors::SharingA { a, b, gate } => {
                let w = router(gate, x);
                let u = a.matvec(x).expect("checked dims");
                let expert_out: Vec<Vec<f64>> =
                    b.iter().map(|bi| bi.matvec(&u).expect("checked dims")).collect();
                let mut dy = vec![0.0; self.config.d_out];
                for (wi, vi) in w.iter().zip(&expert_out) {
                    for (d, v) in dy.iter_mut().zip(vi) {
                        *d += s * wi * v;
                    }
                }
                (
                    dy,
                    Some(w.clone()),
                    AdapterCache {
                        proj: vec![u],
                        expert_out,
                        gate: w,
                        ..Default::default()
                    },
                )
            }
            Factors::ALoRA { a, b, gate } => {
                let w = router(gate, x);
                let proj: Vec<Vec<f64>> = a.iter().map(|ai| ai.matvec(x).expect("checked dims")).collect();
                let mut mixed = vec![0.0; self.config.rank];
                for (wi, hi) in w.iter().zip(&proj) {
                    for (m, h) in mixed.iter_mut().zip(hi) {
                        *m += wi * h;
                    }
                }
                let dy = b.matvec(&mixed).expect("checked dims").into_iter().map(|v| s * v).collect();
                (
                    dy,
                    Some(w.clone()),
                    AdapterCache {
                        proj,
                        mixed,
                        gate: w,
                        ..Default::default()
                    },
                )
            }
        }
    }

    fn accumulate_grad(&self, x: &[f64], g: &[f64], cache: &AdapterCache, weight: f64, grads: &mut [Matrix]) {
        let s = self.config.scaling;
        let sw = s * weight;
        match &self.factors {
            Factors::Vanilla { b, .. } => {
                let u = &cache.proj[0];
                let bt_g = b.t_matvec(g).expect("checked dims");
                grads[0].add_outer(sw, &bt_g, x);
                grads[1].add_outer(sw, g, u);
            }
            Factors::SharingA { b, .. } => {
                let n = b.len();
                let u = &cache.proj[0];
                let w = &cache.gate;
                let mut p = vec![0.0; self.config.rank];
                let mut c = vec![0.0; n];
                for i in 0..n {
                    let bt_g = b[i].t_matvec(g).expect("checked dims");
                    for (pk, v) in p.iter_mut().zip(&bt_g) {
                        *pk += w[i] * v;
                    }
                    grads[1 + i].add_outer(sw * w[i], g, u);
                    c[i] = s * dot(g, &cache.expert_out[i]);
                }
                grads[0].add_outer(sw, &p, x);
                let dz = softmax_backward(w, &c);
                grads[n + 1].add_outer(weight, &dz, x);
            }
            Factors::ALoRA { a, b, .. } => {
                let n = a.len();
                let w = &cache.gate;
                let bt_g = b.t_matvec(g).expect("checked dims");
                for i in 0..n {
                    grads[i].add_outer(sw * w[i], &bt_g, x);
                }
                grads[n].add_outer(sw, g, &cache.mixed);
                let c: Vec<f64> = cache.proj.iter().map(|h| s * dot(&bt_g, h)).collect();
                let dz = softmax_backward(w, &c);
                grads[n + 1].add_outer(weight, &dz, x);
            }
        }
    }
}

fn router(gate: &Matrix, x: &[f64]) -> Vec<f64> {
    let logits = gate.matvec(x).expect("checked dims");
    softmax(&logits).expect("router logits are finite and non-empty")
}

/// Pulls `dL/dw` back through `w = softmax(z)`: `dL/dz = w ⊙ (c - <w, c>)`.
fn softmax_backward(w: &[f64], c: &[f64]) -> Vec<f64> {
    let mean = dot(w, c);
    w.iter().zip(c).map(|(wi, ci)| wi * (ci - mean)).collect()
}

impl AdapterState {
    pub fn scheme(&self) -> Scheme {
        self.config.scheme
    }

    pub fn forward(&self, w0: &Matrix, x: &[f64]) -> Result<Forward> {
        model_forward(self, w0, x)
    }

    /// Mean-over-batch MSE gradients for every trainable matrix.
    pub fn grad(&self, w0: &Matrix, batch: &[Sample]) -> Result<GradBundle> {
        let (loss, mats) = loss_and_grad(self, w0, batch.iter())?;
        Ok(GradBundle {
            loss,
            grads: self.factors.with_matrices(mats)?,
        })
    }

    fn router_weights(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        if x.len() != self.config.d_in {
            return Err(Error::shape("router", "input length != d_in"));
        }
        Ok(self.factors.gate().map(|g| router(g, x)))
    }

    /// Per-expert parts of `∇A` for one sample in the sharing-A structure:
    /// component `i` is `s·w_i (B_iᵀ g) xᵀ`.
    pub fn shared_a_grad_components(&self, x: &[f64], g: &[f64]) -> Result<Vec<Matrix>> {
        let Factors::SharingA { b, .. } = &self.factors else {
            return Err(Error::WrongScheme {
                op: "shared_a_grad_components",
                expected: "sharing_a",
                actual: self.config.scheme.name(),
            });
        };
        self.check_sample_dims(x, g)?;
        let w = self.router_weights(x)?.expect("routed scheme");
        let s = self.config.scaling;
        Ok(b.iter()
            .zip(&w)
            .map(|(bi, wi)| {
                let bt_g = bi.t_matvec(g).expect("checked dims");
                let mut m = Matrix::zeros(self.config.rank, self.config.d_in);
                m.add_outer(s * wi, &bt_g, x);
                m
            })
            .collect())
    }

    /// Per-expert parts of `∇B` for one sample in the ALoRA structure:
    /// component `i` is `s·g (w_i A_i x)ᵀ`.
    pub fn alora_grad_components(&self, x: &[f64], g: &[f64]) -> Result<Vec<Matrix>> {
        let Factors::ALoRA { a, .. } = &self.factors else {
            return Err(Error::WrongScheme {
                op: "alora_grad_components",
                expected: "alora",
                actual: self.config.scheme.name(),
            });
        };
        self.check_sample_dims(x, g)?;
        let w = self.router_weights(x)?.expect("routed scheme");
        let s = self.config.scaling;
        Ok(a.iter()
            .zip(&w)
            .map(|(ai, wi)| {
                let h = ai.matvec(x).expect("checked dims");
                let mut m = Matrix::zeros(self.config.d_out, self.config.rank);
                m.add_outer(s * wi, g, &h);
                m
            })
            .collect())
    }

    fn check_sample_dims(&self, x: &[f64], g: &[f64]) -> Result<()> {
        if x.len() != self.config.d_in || g.len() != self.config.d_out {
            return Err(Error::shape(
                "grad components",
                format!(
                    "x has length {}, g has length {}; expected {} and {}",
                    x.len(),
                    g.len(),
                    self.config.d_in,
                    self.config.d_out
                ),
            ));
        }
        Ok(())
    }

    /// Weight update merged into `W0` for input `x`. Routed schemes need `x`.
    pub fn effective_delta(&self, x: Option<&[f64]>) -> Result<Matrix> {
        let s = self.config.scaling;
        let w = match (self.config.scheme.is_routed(), x) {
            (true, None) => {
                return Err(Error::InvalidConfig(format!(
                    "effective_delta for routed scheme {} needs an input",
                    self.config.scheme.name()
                )))
            }
            (true, Some(x)) => self.router_weights(x)?,
            (false, _) => None,
        };
        let delta = match &self.factors {
            Factors::Vanilla { a, b } => b.matmul(a)?,
            Factors::SharingA { a, b, .. } => {
                let w = w.expect("routed");
                let mut mixed = Matrix::zeros(self.config.d_out, self.config.rank);
                for (bi, wi) in b.iter().zip(&w) {
                    mixed.axpy(*wi, bi)?;
                }
                mixed.matmul(a)?
            }
            Factors::ALoRA { a, b, .. } => {
                let w = w.expect("routed");
                let mut mixed = Matrix::zeros(self.config.rank, self.config.d_in);
                for (ai, wi) in a.iter().zip(&w) {
                    mixed.axpy(*wi, ai)?;
                }
                b.matmul(&mixed)?
            }
        };
        Ok(delta.scale(s))
    }
}
