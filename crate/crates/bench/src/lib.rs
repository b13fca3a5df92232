//! Shared fixtures for the criterion benches.

use alora_core::adapters::{init_adapter, AdapterConfig, AdapterState, Factors, Scheme};
use alora_core::tasks::{gen_suite, Family, SuiteConfig, SyntheticSuite};
use alora_core::RngStream;

/// Default desk-scale suite (64x64, three shared-B tasks).
pub fn default_suite(seed: u64) -> SyntheticSuite {
    gen_suite(&SuiteConfig {
        seed,
        family: Family::SharedB,
        ..SuiteConfig::default()
    })
    .expect("default suite is valid")
}

/// Adapter with every B-side matrix randomized, so gradients are non-trivial.
pub fn trained_like(scheme: Scheme, d: usize, rank: usize, n: usize, seed: u64) -> AdapterState {
    let mut rng = RngStream::new(seed);
    let mut st = init_adapter(&AdapterConfig::new(scheme, d, d, rank, n), &mut rng).expect("valid config");
    match &mut st.factors {
        Factors::Vanilla { b, .. } | Factors::ALoRA { b, .. } => *b = rng.gaussian_matrix(d, rank, 0.1),
        Factors::SharingA { b, .. } => b.iter_mut().for_each(|m| *m = rng.gaussian_matrix(d, rank, 0.1)),
    }
    st
}
