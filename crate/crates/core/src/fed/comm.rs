//! Analytic communication cost per client per round.

use serde::{Deserialize, Serialize};

use super::Strategy;

/// Dimensions of one adapted weight matrix and how many of them a model has.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub d_in: usize,
    pub d_out: usize,
    pub modules: usize,
}

impl Geometry {
    /// q/v projections over 32 layers of a 4096-wide model.
    pub fn llama2_7b_qv() -> Geometry {
        Geometry {
            d_in: 4096,
            d_out: 4096,
            modules: 64,
        }
    }
}

/// Scalars client `client` uploads and downloads for one adapted matrix in one
/// round. `None` when the strategy cannot run with the given ranks.
pub fn payload_per_module(
    strategy: Strategy,
    d_in: usize,
    d_out: usize,
    ranks: &[usize],
    d_m: usize,
    client: usize,
) -> Option<(u64, u64)> {
    let r_i = *ranks.get(client)? as u64;
    let (d_in, d_out, d_m) = (d_in as u64, d_out as u64, d_m as u64);
    let homogeneous = ranks.windows(2).all(|w| w[0] == w[1]);
    let r_max = *ranks.iter().max()? as u64;
    let r_sum: u64 = ranks.iter().map(|r| *r as u64).sum();
    match strategy {
        Strategy::FedIT if homogeneous => Some(((d_in + d_out) * r_i, (d_in + d_out) * r_i)),
        Strategy::FedSA if homogeneous => Some((d_in * r_i, d_in * r_i)),
        Strategy::FedALoRAHomog if homogeneous => Some((d_out * r_i, d_out * r_i)),
        Strategy::FedIT | Strategy::FedSA | Strategy::FedALoRAHomog => None,
        Strategy::ZeroPadding => Some(((d_in + d_out) * r_i, (d_in + d_out) * r_max)),
        Strategy::FLoRA => Some(((d_in + d_out) * r_i, (d_in + d_out) * r_sum)),
        Strategy::FedALoRAHetero => Some((r_i * (d_out + d_m), d_out * d_m)),
        Strategy::FedSAHetero => Some((r_i * (d_in + d_m), d_in * d_m)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommCost {
    pub strategy: Strategy,
    /// Mean over clients, summed over modules.
    pub upload_per_client: f64,
    pub download_per_client: f64,
}

impl CommCost {
    pub fn total_per_client(&self) -> f64 {
        self.upload_per_client + self.download_per_client
    }

    pub fn millions(&self) -> f64 {
        self.total_per_client() / 1e6
    }
}

/// Average per-client, per-round scalars (upload + download) for every
/// strategy that accepts `ranks`.
pub fn comm_cost(geometry: Geometry, ranks: &[usize], d_m: usize) -> Vec<CommCost> {
    if ranks.is_empty() {
        return Vec::new();
    }
    Strategy::ALL
        .iter()
        .filter_map(|&strategy| {
            let mut up = 0u64;
            let mut down = 0u64;
            for client in 0..ranks.len() {
                let (u, d) = payload_per_module(strategy, geometry.d_in, geometry.d_out, ranks, d_m, client)?;
                up += u;
                down += d;
            }
            let scale = geometry.modules as f64 / ranks.len() as f64;
            Some(CommCost {
                strategy,
                upload_per_client: up as f64 * scale,
                download_per_client: down as f64 * scale,
            })
        })
        .collect()
}
