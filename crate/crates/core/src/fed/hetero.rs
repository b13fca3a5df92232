use crate::adapters::LowRankModel;
use crate::error::{Error, Result};
use crate::matcore::{kaiming_uniform, Matrix, RngStream};

/// Per-client state for heterogeneous ranks:
/// `ΔW_i = (B_i0 + B_i2 B_i1) M_i A_i` with `B_i0` a frozen accumulator of
/// every global update received so far.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroClientState {
    /// `r_i x d_in`
    pub a: Matrix,
    /// `d_m x r_i`
    pub m: Matrix,
    /// `r_i x d_m`
    pub b1: Matrix,
    /// `d_out x r_i`
    pub b2: Matrix,
    /// `d_out x d_m`, not trained locally.
    pub b0: Matrix,
}

impl HeteroClientState {
    /// Round-1 state: `A, M, B1` Kaiming-uniform; `B0, B2` zero.
    pub fn init(d_in: usize, d_out: usize, rank: usize, d_m: usize, rng: &mut RngStream) -> Result<Self> {
        if rank == 0 || d_m == 0 || rank > d_in.min(d_out) {
            return Err(Error::InvalidConfig(format!(
                "hetero client needs 1 <= rank <= min(d_in, d_out) and d_m >= 1, got rank {rank}, d_m {d_m}"
            )));
        }
        Ok(HeteroClientState {
            a: kaiming_uniform(rank, d_in, rng)?,
            m: kaiming_uniform(d_m, rank, rng)?,
            b1: kaiming_uniform(rank, d_m, rng)?,
            b2: Matrix::zeros(d_out, rank),
            b0: Matrix::zeros(d_out, d_m),
        })
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d_m(&self) -> usize {
        self.m.rows()
    }

    /// `B_i2 B_i1`, the part uploaded for aggregation.
    pub fn local_b(&self) -> Matrix {
        self.b2.matmul(&self.b1).expect("conformant by construction")
    }

    /// `(B_i0 + B_i2 B_i1) M_i A_i`.
    pub fn effective_delta(&self) -> Matrix {
        let p = self.b0.add(&self.local_b()).expect("same shape");
        p.matmul(&self.m)
            .and_then(|pm| pm.matmul(&self.a))
            .expect("conformant by construction")
    }

    /// Loads a broadcast global matrix into the accumulator and clears the
    /// local `B_i2`, so the effective update becomes `B_0 M_i A_i`.
    pub fn absorb_global(&mut self, global: Matrix) -> Result<()> {
        if global.shape() != self.b0.shape() {
            return Err(Error::shape(
                "HeteroClientState::absorb_global",
                format!("global {:?} vs accumulator {:?}", global.shape(), self.b0.shape()),
            ));
        }
        self.b0 = global;
        self.b2.fill(0.0);
        Ok(())
    }

    /// Start-of-round reset for rounds after the first: fresh random `B_i1`
    /// and zero `B_i2`. Leaves the effective update unchanged.
    pub fn begin_round(&mut self, rng: &mut RngStream) -> Result<()> {
        self.b1 = kaiming_uniform(self.b1.rows(), self.b1.cols(), rng)?;
        self.b2.fill(0.0);
        Ok(())
    }
}

pub struct HeteroCache {
    u: Vec<f64>,
    v: Vec<f64>,
    p: Matrix,
}

impl LowRankModel for HeteroClientState {
    type Cache = HeteroCache;

    fn d_in(&self) -> usize {
        self.a.cols()
    }

    fn d_out(&self) -> usize {
        self.b2.rows()
    }

    fn scheme_tag(&self) -> String {
        "fed_hetero".to_string()
    }

    fn param_names(&self) -> Vec<String> {
        ["A", "M", "B1", "B2"].iter().map(|s| s.to_string()).collect()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.a, &self.m, &self.b1, &self.b2]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.a, &mut self.m, &mut self.b1, &mut self.b2]
    }

    fn delta_forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>, HeteroCache) {
        let u = self.a.matvec(x).expect("checked dims");
        let v = self.m.matvec(&u).expect("checked dims");
        let p = self.b0.add(&self.local_b()).expect("same shape");
        let dy = p.matvec(&v).expect("checked dims");
        (dy, None, HeteroCache { u, v, p })
    }

    fn accumulate_grad(&self, x: &[f64], g: &[f64], cache: &HeteroCache, weight: f64, grads: &mut [Matrix]) {
        // dL/dP = g vᵀ, with P = B0 + B2 B1.
        let b2t_g = self.b2.t_matvec(g).expect("checked dims");
        let b1_v = self.b1.matvec(&cache.v).expect("checked dims");
        grads[2].add_outer(weight, &b2t_g, &cache.v);
        grads[3].add_outer(weight, g, &b1_v);
        let dv = cache.p.t_matvec(g).expect("checked dims");
        grads[1].add_outer(weight, &dv, &cache.u);
        let du = self.m.t_matvec(&dv).expect("checked dims");
        grads[0].add_outer(weight, &du, x);
    }
}

/// Mirror image of [`HeteroClientState`] that shares the A side instead:
/// `ΔW_i = B_i M_i (A_i0 + A_i1 A_i2)`. This is how the A-sharing baseline is
/// run with unequal ranks.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroAState {
    /// `d_out x r_i`
    pub b: Matrix,
    /// `r_i x d_m`
    pub m: Matrix,
    /// `d_m x r_i`
    pub a1: Matrix,
    /// `r_i x d_in`
    pub a2: Matrix,
    /// `d_m x d_in`, not trained locally.
    pub a0: Matrix,
}

impl HeteroAState {
    /// Round-1 state: `B, M, A1` Kaiming-uniform; `A0, A2` zero.
    pub fn init(d_in: usize, d_out: usize, rank: usize, d_m: usize, rng: &mut RngStream) -> Result<Self> {
        if rank == 0 || d_m == 0 || rank > d_in.min(d_out) {
            return Err(Error::InvalidConfig(format!(
                "hetero client needs 1 <= rank <= min(d_in, d_out) and d_m >= 1, got rank {rank}, d_m {d_m}"
            )));
        }
        Ok(HeteroAState {
            b: kaiming_uniform(d_out, rank, rng)?,
            m: kaiming_uniform(rank, d_m, rng)?,
            a1: kaiming_uniform(d_m, rank, rng)?,
            a2: Matrix::zeros(rank, d_in),
            a0: Matrix::zeros(d_m, d_in),
        })
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn d_m(&self) -> usize {
        self.m.cols()
    }

    /// `A_i1 A_i2`, the part uploaded for aggregation.
    pub fn local_a(&self) -> Matrix {
        self.a1.matmul(&self.a2).expect("conformant by construction")
    }

    pub fn effective_delta(&self) -> Matrix {
        let q = self.a0.add(&self.local_a()).expect("same shape");
        self.b
            .matmul(&self.m)
            .and_then(|bm| bm.matmul(&q))
            .expect("conformant by construction")
    }

    pub fn absorb_global(&mut self, global: Matrix) -> Result<()> {
        if global.shape() != self.a0.shape() {
            return Err(Error::shape(
                "HeteroAState::absorb_global",
                format!("global {:?} vs accumulator {:?}", global.shape(), self.a0.shape()),
            ));
        }
        self.a0 = global;
        self.a2.fill(0.0);
        Ok(())
    }

    pub fn begin_round(&mut self, rng: &mut RngStream) -> Result<()> {
        self.a1 = kaiming_uniform(self.a1.rows(), self.a1.cols(), rng)?;
        self.a2.fill(0.0);
        Ok(())
    }
}

pub struct HeteroACache {
    z: Vec<f64>,
    v: Vec<f64>,
    a2x: Vec<f64>,
}

impl LowRankModel for HeteroAState {
    type Cache = HeteroACache;

    fn d_in(&self) -> usize {
        self.a2.cols()
    }

    fn d_out(&self) -> usize {
        self.b.rows()
    }

    fn scheme_tag(&self) -> String {
        "fed_hetero_a".to_string()
    }

    fn param_names(&self) -> Vec<String> {
        ["B", "M", "A1", "A2"].iter().map(|s| s.to_string()).collect()
    }

    fn params(&self) -> Vec<&Matrix> {
        vec![&self.b, &self.m, &self.a1, &self.a2]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.b, &mut self.m, &mut self.a1, &mut self.a2]
    }

    fn delta_forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>, HeteroACache) {
        let q = self.a0.add(&self.local_a()).expect("same shape");
        let z = q.matvec(x).expect("checked dims");
        let v = self.m.matvec(&z).expect("checked dims");
        let dy = self.b.matvec(&v).expect("checked dims");
        let a2x = self.a2.matvec(x).expect("checked dims");
        (dy, None, HeteroACache { z, v, a2x })
    }

    fn accumulate_grad(&self, x: &[f64], g: &[f64], cache: &HeteroACache, weight: f64, grads: &mut [Matrix]) {
        grads[0].add_outer(weight, g, &cache.v);
        let dv = self.b.t_matvec(g).expect("checked dims");
        grads[1].add_outer(weight, &dv, &cache.z);
        // dL/dQ = dz xᵀ, with Q = A0 + A1 A2.
        let dz = self.m.t_matvec(&dv).expect("checked dims");
        grads[2].add_outer(weight, &dz, &cache.a2x);
        let a1t_dz = self.a1.t_matvec(&dz).expect("checked dims");
        grads[3].add_outer(weight, &a1t_dz, x);
    }
}
