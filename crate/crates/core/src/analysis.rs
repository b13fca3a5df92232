//! Measurement toolkit: principal-angle subspace similarity, magnitude /
//! direction decomposition, gradient-conflict counting, the Δm% balance metric
//! and router gate logging.

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterState, LowRankModel};
use crate::error::{Error, Result};
use crate::matcore::{dot, norm, orthonormal_basis, Matrix};
use crate::tasks::Sample;

/// `(1/r) ‖U1ᵀ U2‖²_F` over orthonormal bases of the two column spaces, with
/// `r` the smaller of the two numerical ranks. 1 means aligned; two random
/// `r`-dimensional subspaces of `R^d` average `r/d`.
///
/// Column spaces are compared, so both inputs need the same row count. Pass
/// `A.transpose()` to compare the row spaces of `r x d_in` A-side factors.
pub fn subspace_similarity(m1: &Matrix, m2: &Matrix) -> Result<f64> {
    if m1.rows() != m2.rows() {
        return Err(Error::shape(
            "subspace_similarity",
            format!("long dimensions differ: {} vs {}", m1.rows(), m2.rows()),
        ));
    }
    let b1 = orthonormal_basis(m1)?;
    let b2 = orthonormal_basis(m2)?;
    if b1.is_degenerate() || b2.is_degenerate() {
        return Err(Error::RankZero {
            op: "subspace_similarity",
            detail: format!("ranks {} and {}", b1.rank, b2.rank),
        });
    }
    let r = b1.rank.min(b2.rank) as f64;
    let cross = b1.vectors.transpose().matmul(&b2.vectors)?;
    let f = cross.frobenius_norm();
    Ok((f * f / r).clamp(0.0, 1.0))
}

/// Similarity of two A-side factors (`r x d_in`), i.e. of their row spaces.
pub fn a_similarity(a1: &Matrix, a2: &Matrix) -> Result<f64> {
    subspace_similarity(&a1.transpose(), &a2.transpose())
}

/// `W = m V`: column norms and unit-norm columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MagDir {
    pub magnitude: Vec<f64>,
    pub direction: Matrix,
    /// Indices of all-zero columns; their direction column is left at zero.
    pub zero_columns: Vec<usize>,
}

impl MagDir {
    pub fn reconstruct(&self) -> Matrix {
        let mut w = self.direction.clone();
        for i in 0..w.rows() {
            for (j, m) in self.magnitude.iter().enumerate() {
                w[(i, j)] *= m;
            }
        }
        w
    }
}

pub fn mag_dir(w: &Matrix) -> MagDir {
    let magnitude = w.column_norms();
    let mut direction = w.clone();
    let mut zero_columns = Vec::new();
    for (j, m) in magnitude.iter().enumerate() {
        if *m == 0.0 {
            zero_columns.push(j);
            continue;
        }
        for i in 0..w.rows() {
            direction[(i, j)] /= m;
        }
    }
    MagDir {
        magnitude,
        direction,
        zero_columns,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagDirDelta {
    pub delta_m: f64,
    pub delta_d: f64,
    /// Column pairs where either side was zero; they contribute 0 to `delta_d`.
    pub undefined_columns: usize,
}

/// `ΔM = mean_j |m1_j - m2_j|`, `ΔD = mean_j (1 - cos(V1_j, V2_j))`.
pub fn delta_mag_dir(w1: &Matrix, w2: &Matrix) -> Result<MagDirDelta> {
    if w1.shape() != w2.shape() {
        return Err(Error::shape(
            "delta_mag_dir",
            format!("{:?} vs {:?}", w1.shape(), w2.shape()),
        ));
    }
    let md1 = mag_dir(w1);
    let md2 = mag_dir(w2);
    let d_in = w1.cols();
    if d_in == 0 {
        return Err(Error::Empty { op: "delta_mag_dir" });
    }
    let mut dm = 0.0;
    let mut dd = 0.0;
    let mut undefined = 0;
    for j in 0..d_in {
        dm += (md1.magnitude[j] - md2.magnitude[j]).abs();
        if md1.magnitude[j] == 0.0 || md2.magnitude[j] == 0.0 {
            undefined += 1;
            continue;
        }
        let cos = dot(&md1.direction.column(j), &md2.direction.column(j)).clamp(-1.0, 1.0);
        dd += 1.0 - cos;
    }
    Ok(MagDirDelta {
        delta_m: dm / d_in as f64,
        delta_d: dd / d_in as f64,
        undefined_columns: undefined,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConflictReport {
    /// Pairs with negative cosine.
    pub count: usize,
    /// `(i, j, cos)` for every unordered pair of non-zero components.
    pub pair_cosines: Vec<(usize, usize, f64)>,
    /// Components skipped because their norm was zero.
    pub zero_components: Vec<usize>,
}

/// Flattened (Frobenius) cosine between every pair of gradient components;
/// a negative value counts as a conflict.
pub fn conflict_count(components: &[Matrix]) -> Result<ConflictReport> {
    if components.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "conflict_count needs at least 2 components, got {}",
            components.len()
        )));
    }
    let shape = components[0].shape();
    if components.iter().any(|c| c.shape() != shape) {
        return Err(Error::shape("conflict_count", "components differ in shape"));
    }
    let norms: Vec<f64> = components.iter().map(Matrix::frobenius_norm).collect();
    let zero_components: Vec<usize> = (0..components.len()).filter(|&i| norms[i] == 0.0).collect();
    let mut pair_cosines = Vec::new();
    for i in 0..components.len() {
        for j in (i + 1)..components.len() {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let cos = dot(components[i].as_slice(), components[j].as_slice()) / (norms[i] * norms[j]);
            pair_cosines.push((i, j, cos));
        }
    }
    let count = pair_cosines.iter().filter(|p| p.2 < 0.0).count();
    Ok(ConflictReport {
        count,
        pair_cosines,
        zero_components,
    })
}

/// Per-task metrics against single-task baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub values: Vec<f64>,
    pub baselines: Vec<f64>,
    /// `true` where a higher raw value is better.
    pub higher_is_better: Vec<bool>,
}

impl TaskScores {
    pub fn new(values: Vec<f64>, baselines: Vec<f64>, higher_is_better: Vec<bool>) -> Result<Self> {
        let k = values.len();
        if k == 0 || baselines.len() != k || higher_is_better.len() != k {
            return Err(Error::shape(
                "TaskScores",
                format!(
                    "need equal non-zero lengths, got {}, {}, {}",
                    k,
                    baselines.len(),
                    higher_is_better.len()
                ),
            ));
        }
        if let Some(i) = baselines.iter().position(|b| *b == 0.0) {
            return Err(Error::InvalidConfig(format!("baseline for task {i} is zero")));
        }
        Ok(TaskScores {
            values,
            baselines,
            higher_is_better,
        })
    }

    /// Lower-is-better metrics (MSE) for every task.
    pub fn lower_is_better(values: Vec<f64>, baselines: Vec<f64>) -> Result<Self> {
        let k = values.len();
        TaskScores::new(values, baselines, vec![false; k])
    }
}

/// `Δm% = (1/K) Σ_k (-1)^{δ_k} (M_k - M_0,k) / M_0,k × 100`, with `δ_k = 1`
/// for higher-is-better metrics. Lower is better.
pub fn delta_m_percent(scores: &TaskScores) -> f64 {
    let k = scores.values.len() as f64;
    scores
        .values
        .iter()
        .zip(&scores.baselines)
        .zip(&scores.higher_is_better)
        .map(|((m, b), hib)| {
            let rel = (m - b) / b * 100.0;
            if *hib {
                -rel
            } else {
                rel
            }
        })
        .sum::<f64>()
        / k
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateRow {
    pub sample_id: usize,
    pub task_id: usize,
    pub layer_id: usize,
    pub weights: Vec<f64>,
}

/// Router weights for every evaluated sample. Non-routed adapters produce an
/// empty table and a warning string.
pub fn gate_activation_log(state: &AdapterState, samples: &[Sample]) -> Result<(Vec<GateRow>, Option<String>)> {
    if !state.scheme().is_routed() {
        return Ok((
            Vec::new(),
            Some(format!("scheme {} has no router; gate table empty", state.scheme().name())),
        ));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.x.len() != state.d_in() {
            return Err(Error::shape("gate_activation_log", "input length != d_in"));
        }
        let (_, gate, _) = state.delta_forward(&s.x);
        rows.push(GateRow {
            sample_id: i,
            task_id: s.task,
            layer_id: 0,
            weights: gate.expect("routed scheme"),
        });
    }
    Ok((rows, None))
}

/// Cosine of two flattened vectors; `None` when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::RngStream;

    #[test]
    fn self_similarity_is_one_and_rotation_invariant() {
        let mut rng = RngStream::new(1);
        let m = rng.gaussian_matrix(20, 4, 1.0);
        assert!((subspace_similarity(&m, &m).unwrap() - 1.0).abs() < 1e-10);
        let r = rng.gaussian_matrix(4, 4, 1.0);
        let mr = m.matmul(&r).unwrap();
        assert!((subspace_similarity(&m, &mr).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn similarity_rejects_zero_and_mismatch() {
        let m = Matrix::identity(3);
        assert!(matches!(
            subspace_similarity(&m, &Matrix::zeros(3, 2)),
            Err(Error::RankZero { .. })
        ));
        assert!(subspace_similarity(&m, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn mag_dir_identity_and_hand_case() {
        let md = mag_dir(&Matrix::identity(3));
        assert_eq!(md.magnitude, vec![1.0; 3]);
        assert_eq!(md.direction, Matrix::identity(3));

        let md = mag_dir(&Matrix::from_rows(&[[3.0, 0.0], [4.0, 0.0]]));
        assert_eq!(md.magnitude, vec![5.0, 0.0]);
        assert!((md.direction[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((md.direction[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(md.zero_columns, vec![1]);
    }

    #[test]
    fn mag_dir_reconstructs() {
        let w = RngStream::new(8).gaussian_matrix(7, 5, 2.0);
        let md = mag_dir(&w);
        assert!(md.reconstruct().max_abs_diff(&w).unwrap() < 1e-12);
        for j in 0..5 {
            assert!((norm(&md.direction.column(j)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn delta_mag_dir_cases() {
        let w = RngStream::new(2).gaussian_matrix(4, 3, 1.0);
        let same = delta_mag_dir(&w, &w).unwrap();
        assert_eq!((same.delta_m, same.delta_d), (0.0, 0.0));

        let d = delta_mag_dir(&Matrix::identity(2), &Matrix::diag(&[2.0, 1.0])).unwrap();
        assert_eq!((d.delta_m, d.delta_d), (0.5, 0.0));

        let d = delta_mag_dir(&w, &w.scale(-1.0)).unwrap();
        assert_eq!(d.delta_m, 0.0);
        assert!((d.delta_d - 2.0).abs() < 1e-12);

        let d = delta_mag_dir(&Matrix::zeros(2, 2), &Matrix::identity(2)).unwrap();
        assert_eq!(d.undefined_columns, 2);
        assert_eq!(d.delta_d, 0.0);

        assert!(delta_mag_dir(&Matrix::zeros(2, 3), &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn conflicts_basic() {
        let m = RngStream::new(3).gaussian_matrix(3, 3, 1.0);
        let r = conflict_count(&[m.clone(), m.clone()]).unwrap();
        assert_eq!(r.count, 0);
        assert!((r.pair_cosines[0].2 - 1.0).abs() < 1e-12);
        let r = conflict_count(&[m.clone(), m.scale(-1.0)]).unwrap();
        assert_eq!(r.count, 1);
        assert!((r.pair_cosines[0].2 + 1.0).abs() < 1e-12);
        assert!(conflict_count(std::slice::from_ref(&m)).is_err());
        let r = conflict_count(&[m.clone(), Matrix::zeros(3, 3), m]).unwrap();
        assert_eq!(r.zero_components, vec![1]);
        assert_eq!(r.pair_cosines.len(), 1);
    }

    #[test]
    fn delta_m_zero_when_unchanged_and_rejects_zero_baseline() {
        let s = TaskScores::new(vec![1.0, 2.0], vec![1.0, 2.0], vec![true, false]).unwrap();
        assert_eq!(delta_m_percent(&s), 0.0);
        assert!(TaskScores::lower_is_better(vec![1.0], vec![0.0]).is_err());
        assert!(TaskScores::lower_is_better(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn degrading_a_task_increases_delta_m() {
        let base = vec![80.0, 90.0, 70.0];
        let s0 = TaskScores::new(vec![81.0, 89.0, 70.0], base.clone(), vec![true; 3]).unwrap();
        let s1 = TaskScores::new(vec![81.0, 88.0, 70.0], base, vec![true; 3]).unwrap();
        assert!(delta_m_percent(&s1) > delta_m_percent(&s0));
    }
}
