//! Dense linear algebra, seeded initialization and small factorizations.

mod matrix;
mod rng;
mod svd;

pub use matrix::{dot, norm, Matrix};
pub use rng::{derive_seed, kaiming_bound, kaiming_uniform, RngStream, KAIMING_GAIN, RNG_ALGORITHM};
pub use svd::{orthonormal_basis, svd_thin, Basis, Svd, RANK_TOLERANCE};

use crate::error::{Error, Result};

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty { op: "softmax" });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let w = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_logit_is_one() {
        assert_eq!(softmax(&[-42.5]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let w = softmax(&[1000.0, 0.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert!((0.0..1e-300).contains(&w[1]));
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(softmax(&[]).is_err());
    }
}
