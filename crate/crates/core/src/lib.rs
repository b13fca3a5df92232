//! Multi-LoRA adapters with routed experts, federated B-sharing protocols,
//! and the analysis toolkit used to compare them on synthetic tasks.
//!
//! Module map:
//! - [`matcore`]: dense matrices, seeded streams, SVD.
//! - [`adapters`]: vanilla, sharing-A and sharing-B (ALoRA) adapters.
//! - [`analysis`]: subspace similarity, magnitude/direction drift, gradient
//!   conflicts, Δm%.
//! - [`tasks`]: synthetic suites and the training loop.
//! - [`fed`]: federated rounds and communication accounting.
//! - [`harness`]: config, checkpoints, result files, experiment runner.

pub mod adapters;
pub mod analysis;
pub mod error;
pub mod fed;
pub mod harness;
pub mod matcore;
pub mod selftest;
pub mod tasks;

pub use adapters::{init_adapter, AdapterConfig, AdapterState, Factors, GradBundle, LowRankModel, Scheme};
pub use error::{Error, Result};
pub use matcore::{Matrix, RngStream};
