//! Thin SVD by one-sided Jacobi rotations, plus the column-space basis
//! extraction built on it.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Relative tolerance below which a singular value is treated as zero when
/// extracting a column-space basis.
pub const RANK_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 80;
const ORTHO_EPS: f64 = 1e-15;

/// `m = u * diag(s) * vt` with `u: rows x k`, `vt: k x cols`, `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

pub fn svd_thin(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::NonFinite { op: "svd_thin" });
    }
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose());
        return Ok(Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        });
    }
    Ok(svd_tall(m))
}

/// One-sided Jacobi for `rows >= cols`: orthogonalize the columns of a working
/// copy by plane rotations, accumulating the rotations in `V`.
fn svd_tall(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    // Column-major working copies make the pair rotations contiguous.
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= ORTHO_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = a.iter().map(|c| dot(c, c).sqrt()).enumerate().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let s_max = order.first().map_or(0.0, |o| o.1);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut s = Vec::with_capacity(cols);
    let mut vt = Matrix::zeros(cols, cols);
    for (k, (j, sigma)) in order.iter().enumerate() {
        s.push(*sigma);
        for (i, vij) in v[*j].iter().enumerate() {
            vt[(k, i)] = *vij;
        }
        if *sigma > f64::EPSILON * s_max.max(f64::MIN_POSITIVE) * rows as f64 && *sigma > 0.0 {
            u_cols.push(a[*j].iter().map(|x| x / sigma).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    complete_orthonormal(&mut u_cols, rows);

    let mut u = Matrix::zeros(rows, cols);
    for (j, col) in u_cols.iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            u[(i, j)] = *x;
        }
    }
    Svd { u, s, vt }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills empty slots (null singular directions) with unit vectors orthogonal
/// to everything already present, via Gram-Schmidt against the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], dim: usize) {
    let mut candidate = 0;
    for k in 0..cols.len() {
        if !cols[k].is_empty() {
            continue;
        }
        while candidate < dim {
            let mut e = vec![0.0; dim];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of classical Gram-Schmidt.
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let d = dot(&e, other);
                    for (ei, oi) in e.iter_mut().zip(other) {
                        *ei -= d * oi;
                    }
                }
            }
            let n = dot(&e, &e).sqrt();
            if n > 1e-8 {
                cols[k] = e.into_iter().map(|x| x / n).collect();
                break;
            }
        }
    }
}

/// Orthonormal basis of a column space.
#[derive(Clone, Debug)]
pub struct Basis {
    /// `d x rank`, orthonormal columns.
    pub vectors: Matrix,
    pub rank: usize,
    pub s_max: f64,
}

impl Basis {
    /// True when the input had no singular value above tolerance.
    pub fn is_degenerate(&self) -> bool {
        self.rank == 0
    }
}

/// Left singular vectors whose singular values exceed `RANK_TOLERANCE * s_max`.
pub fn orthonormal_basis(m: &Matrix) -> Result<Basis> {
    if m.cols() == 0 {
        return Err(Error::Empty {
            op: "orthonormal_basis",
        });
    }
    let svd = svd_thin(m)?;
    let s_max = svd.s.first().copied().unwrap_or(0.0);
    let rank = if s_max == 0.0 {
        0
    } else {
        svd.s.iter().filter(|s| **s > RANK_TOLERANCE * s_max).count()
    };
    Ok(Basis {
        vectors: svd.u.leading_columns(rank),
        rank,
        s_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::RngStream;

    fn orthogonality_error(q: &Matrix) -> f64 {
        let qtq = q.transpose().matmul(q).unwrap();
        qtq.max_abs_diff(&Matrix::identity(q.cols())).unwrap()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = svd_thin(&Matrix::identity(3)).unwrap();
        assert_eq!(svd.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_case() {
        let svd = svd_thin(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert_eq!(svd.s, vec![3.0, 2.0]);
        for m in [&svd.u, &svd.vt] {
            // signed permutation: every entry is 0 or ±1
            assert!(m.as_slice().iter().all(|x| *x == 0.0 || x.abs() == 1.0));
        }
    }

    #[test]
    fn random_reconstruction_tall_and_wide() {
        let mut rng = RngStream::new(4);
        for (r, c) in [(8, 4), (4, 8), (5, 5), (30, 7)] {
            let m = rng.gaussian_matrix(r, c, 1.0);
            let svd = svd_thin(&m).unwrap();
            let err = svd.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
            assert!(err < 1e-10, "{r}x{c}: {err}");
            assert!(orthogonality_error(&svd.u) < 1e-10);
            assert!(orthogonality_error(&svd.vt.transpose()) < 1e-10);
            assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_u_still_orthonormal() {
        let u = [1.0, 2.0, 0.0, -1.0];
        let v = [0.5, 1.0, 3.0];
        let m = Matrix::outer(&u, &v);
        let svd = svd_thin(&m).unwrap();
        assert!(orthogonality_error(&svd.u) < 1e-10);
        let err = svd.reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(err < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(svd_thin(&m).is_err());
    }

    #[test]
    fn basis_of_rank_one_outer_product_is_parallel_to_u() {
        let u = [3.0, 0.0, 4.0, 0.0];
        let m = Matrix::outer(&u, &[1.0, -2.0]);
        let b = orthonormal_basis(&m).unwrap();
        assert_eq!(b.rank, 1);
        let col = b.vectors.column(0);
        let cos = dot(&col, &u) / 5.0;
        assert!((cos.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_of_orthogonal_matrix() {
        let theta: f64 = 0.3;
        let q = Matrix::from_rows(&[[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]);
        let b = orthonormal_basis(&q).unwrap();
        assert_eq!(b.rank, 2);
        assert!(orthogonality_error(&b.vectors) < 1e-10);
    }

    #[test]
    fn zero_matrix_is_flagged_rank_zero() {
        let b = orthonormal_basis(&Matrix::zeros(4, 2)).unwrap();
        assert!(b.is_degenerate());
        assert_eq!(b.vectors.shape(), (4, 0));
    }
}
