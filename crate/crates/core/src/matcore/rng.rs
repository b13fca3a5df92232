//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a single `u64` seed expanded
//! with `SeedableRng::seed_from_u64`. ChaCha output is fixed by its reference
//! specification, so identical seeds give identical draws on every platform.
//! The stream position (`cursor`) is the ChaCha word offset and is stored in
//! checkpoints so a resumed run continues the exact same sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::error::{Error, Result};

pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64";

/// Kaiming-uniform gain. The bound is `gain * sqrt(3 / fan_in)`.
pub const KAIMING_GAIN: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream for `(master, role, index, round)`. Distinct tuples map to
    /// independent seeds, so adding a client or task never shifts the draws
    /// of another.
    pub fn derive(master: u64, role: &str, index: u64, round: u64) -> Self {
        RngStream::new(derive_seed(master, role, index, round))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Position in the underlying stream, in 32-bit words.
    pub fn cursor(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Rebuilds a stream at a saved position.
    pub fn at(seed: u64, cursor: u128) -> Self {
        let mut s = RngStream::new(seed);
        s.inner.set_word_pos(cursor);
        s
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| std * self.normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("length matches")
    }

    pub fn gaussian_vector(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }
}

/// Bound of the Kaiming-uniform distribution for a given fan-in.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    KAIMING_GAIN * (3.0 / fan_in as f64).sqrt()
}

/// `rows x cols` matrix with i.i.d. entries on `[-b, b]`, `b = sqrt(3 / cols)`.
pub fn kaiming_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig(format!(
            "kaiming_uniform needs non-zero dims, got {rows}x{cols}"
        )));
    }
    let bound = kaiming_bound(cols);
    let data = (0..rows * cols)
        .map(|_| bound * (2.0 * rng.uniform() - 1.0))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the role label, then SplitMix64 chaining over the numeric
/// fields.
pub fn derive_seed(master: u64, role: &str, index: u64, round: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in role.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = mix64(master);
    s = mix64(s ^ h);
    s = mix64(s ^ index);
    mix64(s ^ round)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let a = kaiming_uniform(5, 7, &mut RngStream::new(11)).unwrap();
        let b = kaiming_uniform(5, 7, &mut RngStream::new(11)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = kaiming_uniform(5, 7, &mut RngStream::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn kaiming_respects_support() {
        let m = kaiming_uniform(40, 30, &mut RngStream::new(3)).unwrap();
        let bound = kaiming_bound(30);
        assert!(m.as_slice().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn kaiming_mean_within_three_sigma() {
        // Uniform[-b, b] has std b/sqrt(3); the sample mean of N draws has
        // std b/sqrt(3N).
        let n = 1000 * 1000;
        let m = kaiming_uniform(1000, 1000, &mut RngStream::new(99)).unwrap();
        let mean: f64 = m.as_slice().iter().sum::<f64>() / n as f64;
        let sigma = kaiming_bound(1000) / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn kaiming_rejects_zero_dims() {
        assert!(kaiming_uniform(0, 3, &mut RngStream::new(1)).is_err());
        assert!(kaiming_uniform(3, 0, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn cursor_resumes_sequence() {
        let mut a = RngStream::new(5);
        for _ in 0..17 {
            a.normal();
        }
        let mut b = RngStream::at(a.seed(), a.cursor());
        for _ in 0..10 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn derived_streams_differ_by_every_field() {
        let base = derive_seed(1, "client", 0, 0);
        assert_ne!(base, derive_seed(2, "client", 0, 0));
        assert_ne!(base, derive_seed(1, "task", 0, 0));
        assert_ne!(base, derive_seed(1, "client", 1, 0));
        assert_ne!(base, derive_seed(1, "client", 0, 1));
        assert_eq!(base, derive_seed(1, "client", 0, 0));
    }
}
