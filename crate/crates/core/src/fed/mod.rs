//! Synchronous federated round engine.
//!
//! Fed-ALoRA shares only the B side: in the homogeneous setting clients upload
//! `B_i` and receive the aggregate; with heterogeneous ranks each client factors
//! its B side as `B_i2 B_i1` (through an intermediate `M_i` of width `d_m`) so
//! the uploaded products all share the shape `d_out x d_m`. Baselines: FedIT
//! (aggregate A and B), FedSA (aggregate A), zero padding to the largest rank,
//! and FLoRA-style stacking. The A-sharing baseline gets the mirrored
//! decomposition `B_i M_i (A_i0 + A_i1 A_i2)` when ranks differ.

mod comm;
mod hetero;
mod transport;

pub use comm::{comm_cost, payload_per_module, CommCost, Geometry};
pub use hetero::{HeteroAState, HeteroClientState};
pub use transport::{CommLedger, LedgerEntry, Packet, Transport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{init_adapter, AdapterConfig, AdapterState, Factors, LowRankModel, Scheme};
use crate::error::{Error, Result};
use crate::matcore::{derive_seed, kaiming_uniform, Matrix, RngStream};
use crate::tasks::{evaluate, train, Sample, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "fed_alora_homog")]
    FedALoRAHomog,
    #[serde(rename = "fed_alora_hetero")]
    FedALoRAHetero,
    #[serde(rename = "fedit")]
    FedIT,
    #[serde(rename = "fedsa")]
    FedSA,
    #[serde(rename = "fedsa_hetero")]
    FedSAHetero,
    #[serde(rename = "zero_padding")]
    ZeroPadding,
    #[serde(rename = "flora")]
    FLoRA,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::FedIT,
        Strategy::FedSA,
        Strategy::FedALoRAHomog,
        Strategy::ZeroPadding,
        Strategy::FLoRA,
        Strategy::FedSAHetero,
        Strategy::FedALoRAHetero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedALoRAHomog => "fed_alora_homog",
            Strategy::FedALoRAHetero => "fed_alora_hetero",
            Strategy::FedIT => "fedit",
            Strategy::FedSA => "fedsa",
            Strategy::FedSAHetero => "fedsa_hetero",
            Strategy::ZeroPadding => "zero_padding",
            Strategy::FLoRA => "flora",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        Strategy::ALL.into_iter().find(|st| st.name() == s)
    }

    pub fn requires_equal_ranks(self) -> bool {
        matches!(self, Strategy::FedALoRAHomog | Strategy::FedIT | Strategy::FedSA)
    }

    /// Strategies built on the `d_m`-wide decomposition.
    pub fn uses_d_m(self) -> bool {
        matches!(self, Strategy::FedALoRAHetero | Strategy::FedSAHetero)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub strategy: Strategy,
    /// One rank per client.
    pub ranks: Vec<usize>,
    /// Intermediate width for the heterogeneous decomposition.
    pub d_m: usize,
    /// Aggregation weights; uniform when `None`.
    pub weights: Option<Vec<f64>>,
    /// Local training; `epochs` is the number of local epochs per round.
    pub train: TrainConfig,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_clients == 0 {
            problems.push("n_clients must be >= 1".to_string());
        }
        if self.ranks.len() != self.n_clients {
            problems.push(format!(
                "ranks has {} entries but n_clients is {}",
                self.ranks.len(),
                self.n_clients
            ));
        }
        if self.ranks.contains(&0) {
            problems.push("ranks must be >= 1".to_string());
        }
        if self.strategy.requires_equal_ranks() && self.ranks.windows(2).any(|w| w[0] != w[1]) {
            problems.push(format!("strategy {} requires equal ranks", self.strategy.name()));
        }
        if self.strategy.uses_d_m() && self.d_m == 0 {
            problems.push("d_m must be >= 1".to_string());
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n_clients {
                problems.push(format!("weights has {} entries, expected {}", w.len(), self.n_clients));
            }
            if w.iter().any(|v| *v < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                problems.push("weights must be non-negative and sum to 1".to_string());
            }
        }
        if let Err(e) = self.train.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    pub fn aggregation_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.n_clients as f64; self.n_clients])
    }

    pub fn r_max(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(0)
    }
}

/// Element-wise weighted mean.
pub fn aggregate(matrices: &[&Matrix], weights: &[f64]) -> Result<Matrix> {
    let Some(first) = matrices.first() else {
        return Err(Error::Empty { op: "aggregate" });
    };
    if weights.len() != matrices.len() {
        return Err(Error::shape(
            "aggregate",
            format!("{} matrices, {} weights", matrices.len(), weights.len()),
        ));
    }
    if matrices.len() == 1 && weights[0] == 1.0 {
        return Ok((*first).clone());
    }
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for (m, w) in matrices.iter().zip(weights) {
        if m.shape() != first.shape() {
            return Err(Error::shape(
                "aggregate",
                format!("{:?} vs {:?}", m.shape(), first.shape()),
            ));
        }
        out.axpy(*w, m)?;
    }
    Ok(out)
}

/// Seed of client `client`'s round-1 initialization stream.
pub fn client_init_stream(seed: u64, client: usize) -> RngStream {
    RngStream::derive(seed, "fed/client-init", client as u64, 0)
}

/// Shuffle seed for client `client`'s local training in round `round`.
pub fn client_shuffle_seed(seed: u64, client: usize, round: usize) -> u64 {
    derive_seed(seed, "fed/client-shuffle", client as u64, round as u64)
}

/// Stream for start-of-round re-initialization (hetero `B_i1`, FLoRA LoRA).
pub fn client_reinit_stream(seed: u64, client: usize, round: usize) -> RngStream {
    RngStream::derive(seed, "fed/client-reinit", client as u64, round as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientState {
    /// Plain LoRA pair (FedIT, FedSA, Fed-ALoRA homogeneous, zero padding).
    Lora(AdapterState),
    /// FLoRA: a LoRA pair on top of a frozen, client-side folded delta.
    Stacked { lora: AdapterState, folded: Matrix },
    Hetero(HeteroClientState),
    HeteroA(HeteroAState),
}

impl ClientState {
    /// Weight update this client currently applies on top of `W0`.
    pub fn effective_delta(&self) -> Matrix {
        match self {
            ClientState::Lora(st) => st.effective_delta(None).expect("vanilla needs no input"),
            ClientState::Stacked { lora, folded } => folded
                .add(&lora.effective_delta(None).expect("vanilla needs no input"))
                .expect("same shape"),
            ClientState::Hetero(h) => h.effective_delta(),
            ClientState::HeteroA(h) => h.effective_delta(),
        }
    }

    pub fn lora(&self) -> Option<&AdapterState> {
        match self {
            ClientState::Lora(st) | ClientState::Stacked { lora: st, .. } => Some(st),
            ClientState::Hetero(_) | ClientState::HeteroA(_) => None,
        }
    }

    fn named_matrices_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        match self {
            ClientState::Lora(st) => named_mut(st),
            ClientState::Stacked { lora, folded } => {
                let mut v = named_mut(lora);
                v.push(("folded".to_string(), folded));
                v
            }
            ClientState::Hetero(h) => {
                vec![
                    ("A".into(), &mut h.a),
                    ("M".into(), &mut h.m),
                    ("B1".into(), &mut h.b1),
                    ("B2".into(), &mut h.b2),
                    ("B0".into(), &mut h.b0),
                ]
            }
            ClientState::HeteroA(h) => {
                vec![
                    ("B".into(), &mut h.b),
                    ("M".into(), &mut h.m),
                    ("A1".into(), &mut h.a1),
                    ("A2".into(), &mut h.a2),
                    ("A0".into(), &mut h.a0),
                ]
            }
        }
    }
}

fn named_mut(st: &mut AdapterState) -> Vec<(String, &mut Matrix)> {
    let names = st.param_names();
    names.into_iter().zip(st.params_mut()).collect()
}

fn lora_mut(st: &mut AdapterState) -> (&mut Matrix, &mut Matrix) {
    match &mut st.factors {
        Factors::Vanilla { a, b } => (a, b),
        _ => unreachable!("federated clients hold vanilla adapters"),
    }
}

fn lora_ref(st: &AdapterState) -> (&Matrix, &Matrix) {
    match &st.factors {
        Factors::Vanilla { a, b } => (a, b),
        _ => unreachable!("federated clients hold vanilla adapters"),
    }
}

/// Latest server-side matrices (aggregates, or the stacked pair for FLoRA).
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub global: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Mean training loss of each client's last local epoch.
    pub client_loss: Vec<f64>,
    /// Frobenius norm of each server-side matrix after aggregation.
    pub global_norms: Vec<f64>,
}

/// One client's local data.
#[derive(Clone, Debug)]
pub struct ClientData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Debug)]
pub struct Federation {
    pub config: FedConfig,
    pub w0: Matrix,
    pub clients: Vec<ClientState>,
    pub server: ServerState,
    pub transport: Transport,
    /// Number of completed rounds.
    pub round: usize,
}

impl Federation {
    /// Round-1 initialization for every client.
    pub fn new(config: FedConfig, w0: Matrix) -> Result<Self> {
        config.validate()?;
        let (d_out, d_in) = w0.shape();
        let clients = (0..config.n_clients)
            .map(|i| {
                let mut rng = client_init_stream(config.seed, i);
                let r = config.ranks[i];
                Ok(match config.strategy {
                    Strategy::FedALoRAHetero => {
                        ClientState::Hetero(HeteroClientState::init(d_in, d_out, r, config.d_m, &mut rng)?)
                    }
                    Strategy::FedSAHetero => {
                        ClientState::HeteroA(HeteroAState::init(d_in, d_out, r, config.d_m, &mut rng)?)
                    }
                    Strategy::FLoRA => ClientState::Stacked {
                        lora: init_adapter(&AdapterConfig::new(Scheme::Vanilla, d_in, d_out, r, 1), &mut rng)?,
                        folded: Matrix::zeros(d_out, d_in),
                    },
                    _ => ClientState::Lora(init_adapter(
                        &AdapterConfig::new(Scheme::Vanilla, d_in, d_out, r, 1),
                        &mut rng,
                    )?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let r = config.ranks[0];
        let r_max = config.r_max();
        let r_sum: usize = config.ranks.iter().sum();
        let global = match config.strategy {
            Strategy::FedALoRAHomog => vec![Matrix::zeros(d_out, r)],
            Strategy::FedALoRAHetero => vec![Matrix::zeros(d_out, config.d_m)],
            Strategy::FedSAHetero => vec![Matrix::zeros(config.d_m, d_in)],
            Strategy::FedIT => vec![Matrix::zeros(r, d_in), Matrix::zeros(d_out, r)],
            Strategy::FedSA => vec![Matrix::zeros(r, d_in)],
            Strategy::ZeroPadding => vec![Matrix::zeros(r_max, d_in), Matrix::zeros(d_out, r_max)],
            Strategy::FLoRA => vec![Matrix::zeros(r_sum, d_in), Matrix::zeros(d_out, r_sum)],
        };
        Ok(Federation {
            config,
            w0,
            clients,
            server: ServerState { global },
            transport: Transport::default(),
            round: 0,
        })
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.transport.ledger
    }

    /// Runs the next round of the configured strategy.
    pub fn run_round(&mut self, data: &[ClientData]) -> Result<RoundReport> {
        if data.len() != self.config.n_clients {
            return Err(Error::shape(
                "run_round",
                format!("{} datasets for {} clients", data.len(), self.config.n_clients),
            ));
        }
        match self.config.strategy {
            Strategy::FedALoRAHomog => run_round_homog(self, data),
            Strategy::FedALoRAHetero | Strategy::FedSAHetero => run_round_hetero(self, data),
            _ => run_round_baseline(self, data),
        }
    }

    pub fn run(&mut self, data: &[ClientData]) -> Result<Vec<RoundReport>> {
        let mut reports = Vec::new();
        while self.round < self.config.rounds {
            reports.push(self.run_round(data)?);
        }
        Ok(reports)
    }

    /// Test MSE of client `i`'s model on a dataset.
    pub fn client_mse(&self, i: usize, data: &[Sample]) -> Result<f64> {
        match &self.clients[i] {
            ClientState::Lora(st) => evaluate(st, &self.w0, data),
            ClientState::Stacked { lora, folded } => evaluate(lora, &self.w0.add(folded)?, data),
            ClientState::Hetero(h) => evaluate(h, &self.w0, data),
            ClientState::HeteroA(h) => evaluate(h, &self.w0, data),
        }
    }

    /// `out[i][j]`: client `i`'s model on client `j`'s test set.
    pub fn cross_mse(&self, data: &[ClientData]) -> Result<Vec<Vec<f64>>> {
        (0..self.clients.len())
            .map(|i| data.iter().map(|d| self.client_mse(i, &d.test)).collect())
            .collect()
    }

    /// Every client and server matrix with a stable name, for checkpointing.
    pub fn named_matrices(&self) -> Vec<(String, Matrix)> {
        let mut copy = self.clone();
        copy.named_matrices_mut()
            .into_iter()
            .map(|(n, m)| (n, m.clone()))
            .collect()
    }

    pub fn named_matrices_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (i, c) in self.clients.iter_mut().enumerate() {
            for (name, m) in c.named_matrices_mut() {
                out.push((format!("client{i}/{name}"), m));
            }
        }
        for (k, m) in self.server.global.iter_mut().enumerate() {
            out.push((format!("server/global{k}"), m));
        }
        out
    }

    /// Rebuilds a federation at a round boundary from checkpointed matrices.
    pub fn restore(config: FedConfig, w0: Matrix, round: usize, records: &[(String, Matrix)]) -> Result<Self> {
        let mut fed = Federation::new(config, w0)?;
        fed.round = round;
        let slots = fed.named_matrices_mut();
        if slots.len() != records.len() {
            return Err(Error::InvalidConfig(format!(
                "federated checkpoint has {} matrices, expected {}",
                records.len(),
                slots.len()
            )));
        }
        for (name, slot) in slots {
            let (_, m) = records
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks matrix {name}")))?;
            if m.shape() != slot.shape() {
                return Err(Error::shape("Federation::restore", format!("{name}: {:?} vs {:?}", m.shape(), slot.shape())));
            }
            *slot = m.clone();
        }
        Ok(fed)
    }

    fn local_configs(&self, round: usize) -> Vec<TrainConfig> {
        (0..self.config.n_clients)
            .map(|i| self.config.train.with_seed(client_shuffle_seed(self.config.seed, i, round)))
            .collect()
    }

    /// Trains every client in parallel on its own data. Returns the last
    /// epoch's mean loss per client.
    fn local_training(&mut self, data: &[ClientData], round: usize) -> Result<Vec<f64>> {
        let cfgs = self.local_configs(round);
        let w0 = &self.w0;
        self.clients
            .par_iter_mut()
            .zip(data.par_iter())
            .zip(cfgs.par_iter())
            .map(|((client, d), cfg)| {
                let last = |curve: &[f64]| curve.last().copied().unwrap_or(f64::NAN);
                match client {
                    ClientState::Lora(st) => {
                        let out = train(st.clone(), w0, &d.train, cfg)?;
                        *st = out.model;
                        Ok(last(&out.loss_curve))
                    }
                    ClientState::Stacked { lora, folded } => {
                        let base = w0.add(folded)?;
                        let out = train(lora.clone(), &base, &d.train, cfg)?;
                        *lora = out.model;
                        Ok(last(&out.loss_curve))
                    }
                    ClientState::Hetero(h) => {
                        let out = train(h.clone(), w0, &d.train, cfg)?;
                        *h = out.model;
                        Ok(last(&out.loss_curve))
                    }
                    ClientState::HeteroA(h) => {
                        let out = train(h.clone(), w0, &d.train, cfg)?;
                        *h = out.model;
                        Ok(last(&out.loss_curve))
                    }
                }
            })
            .collect()
    }

    fn finish_round(&mut self, round: usize, client_loss: Vec<f64>) -> RoundReport {
        self.round = round;
        RoundReport {
            round,
            client_loss,
            global_norms: self.server.global.iter().map(Matrix::frobenius_norm).collect(),
        }
    }
}

/// Fed-ALoRA, equal ranks: train `(A_i, B_i)`, upload `B_i`, aggregate,
/// broadcast `B_0` which every client adopts as its next `B_i`. `A_i` never
/// leaves the client.
pub fn run_round_homog(fed: &mut Federation, data: &[ClientData]) -> Result<RoundReport> {
    if fed.config.strategy != Strategy::FedALoRAHomog {
        return Err(Error::InvalidConfig("run_round_homog needs fed_alora_homog".into()));
    }
    let round = fed.round + 1;
    let losses = fed.local_training(data, round)?;
    let mut uploads = Vec::with_capacity(fed.clients.len());
    for (i, c) in fed.clients.iter().enumerate() {
        let st = c.lora().expect("lora client");
        let (_, b) = lora_ref(st);
        uploads.push(fed.transport.upload(round, i, &[b])?.remove(0));
    }
    let refs: Vec<&Matrix> = uploads.iter().collect();
    let b0 = aggregate(&refs, &fed.config.aggregation_weights())?;
    for (i, c) in fed.clients.iter_mut().enumerate() {
        let received = fed.transport.download(round, i, &[&b0])?.remove(0);
        let ClientState::Lora(st) = c else { unreachable!() };
        *lora_mut(st).1 = received;
    }
    fed.server.global = vec![b0];
    Ok(fed.finish_round(round, losses))
}

/// Rounds for the `d_m` decomposition. For Fed-ALoRA clients upload
/// `(B_i1, B_i2)`; the server forms each `B_i2 B_i1` (`d_out x d_m`),
/// aggregates, and adds the result to its running global `B_0`. On receipt
/// every client loads `B_0` into its accumulator `B_i0` and zeroes `B_i2`;
/// rounds after the first then re-draw `B_i1` before local training. The
/// A-sharing variant does the same with `(A_i1, A_i2)` and `A_0`.
pub fn run_round_hetero(fed: &mut Federation, data: &[ClientData]) -> Result<RoundReport> {
    if !fed.config.strategy.uses_d_m() {
        return Err(Error::InvalidConfig(format!(
            "run_round_hetero cannot run {}",
            fed.config.strategy.name()
        )));
    }
    let d_m = fed.config.d_m;
    if let Some(bad) = fed.clients.iter().position(|c| match c {
        ClientState::Hetero(h) => h.d_m() != d_m,
        ClientState::HeteroA(h) => h.d_m() != d_m,
        _ => true,
    }) {
        return Err(Error::shape("run_round_hetero", format!("client {bad} does not share d_m = {d_m}")));
    }
    let round = fed.round + 1;
    if round > 1 {
        for (i, c) in fed.clients.iter_mut().enumerate() {
            let mut rng = client_reinit_stream(fed.config.seed, i, round);
            match c {
                ClientState::Hetero(h) => h.begin_round(&mut rng)?,
                ClientState::HeteroA(h) => h.begin_round(&mut rng)?,
                _ => unreachable!(),
            }
        }
    }
    let losses = fed.local_training(data, round)?;
    let mut products = Vec::with_capacity(fed.clients.len());
    for (i, c) in fed.clients.iter().enumerate() {
        let product = match c {
            ClientState::Hetero(h) => {
                let got = fed.transport.upload(round, i, &[&h.b1, &h.b2])?;
                got[1].matmul(&got[0])?
            }
            ClientState::HeteroA(h) => {
                let got = fed.transport.upload(round, i, &[&h.a1, &h.a2])?;
                got[0].matmul(&got[1])?
            }
            _ => unreachable!(),
        };
        products.push(product);
    }
    let refs: Vec<&Matrix> = products.iter().collect();
    let mean = aggregate(&refs, &fed.config.aggregation_weights())?;
    let global = fed.server.global[0].add(&mean)?;
    for (i, c) in fed.clients.iter_mut().enumerate() {
        let received = fed.transport.download(round, i, &[&global])?.remove(0);
        match c {
            ClientState::Hetero(h) => h.absorb_global(received)?,
            ClientState::HeteroA(h) => h.absorb_global(received)?,
            _ => unreachable!(),
        }
    }
    fed.server.global = vec![global];
    Ok(fed.finish_round(round, losses))
}

/// FedIT, FedSA, zero padding and FLoRA stacking.
pub fn run_round_baseline(fed: &mut Federation, data: &[ClientData]) -> Result<RoundReport> {
    let strategy = fed.config.strategy;
    if matches!(
        strategy,
        Strategy::FedALoRAHomog | Strategy::FedALoRAHetero | Strategy::FedSAHetero
    ) {
        return Err(Error::InvalidConfig(format!("{} is not a baseline strategy", strategy.name())));
    }
    let round = fed.round + 1;
    let losses = fed.local_training(data, round)?;
    let weights = fed.config.aggregation_weights();
    let (d_out, d_in) = fed.w0.shape();

    let mut up_a = Vec::new();
    let mut up_b = Vec::new();
    for (i, c) in fed.clients.iter().enumerate() {
        let (a, b) = lora_ref(c.lora().expect("lora client"));
        match strategy {
            Strategy::FedSA => up_a.push(fed.transport.upload(round, i, &[a])?.remove(0)),
            _ => {
                let mut got = fed.transport.upload(round, i, &[a, b])?;
                up_b.push(got.pop().expect("two matrices"));
                up_a.push(got.pop().expect("two matrices"));
            }
        }
    }

    match strategy {
        Strategy::FedIT | Strategy::ZeroPadding => {
            let r_max = fed.config.r_max();
            let pa: Vec<Matrix> = up_a.iter().map(|a| a.zero_pad(r_max, d_in)).collect::<Result<_>>()?;
            let pb: Vec<Matrix> = up_b.iter().map(|b| b.zero_pad(d_out, r_max)).collect::<Result<_>>()?;
            let ga = aggregate(&pa.iter().collect::<Vec<_>>(), &weights)?;
            let gb = aggregate(&pb.iter().collect::<Vec<_>>(), &weights)?;
            for (i, c) in fed.clients.iter_mut().enumerate() {
                let mut got = fed.transport.download(round, i, &[&ga, &gb])?;
                let ClientState::Lora(st) = c else { unreachable!() };
                let r_i = st.config.rank;
                let gb_i = got.pop().expect("two matrices");
                let ga_i = got.pop().expect("two matrices");
                let (a, b) = lora_mut(st);
                *a = ga_i.leading_rows(r_i);
                *b = gb_i.leading_columns(r_i);
            }
            fed.server.global = vec![ga, gb];
        }
        Strategy::FedSA => {
            let ga = aggregate(&up_a.iter().collect::<Vec<_>>(), &weights)?;
            for (i, c) in fed.clients.iter_mut().enumerate() {
                let received = fed.transport.download(round, i, &[&ga])?.remove(0);
                let ClientState::Lora(st) = c else { unreachable!() };
                *lora_mut(st).0 = received;
            }
            fed.server.global = vec![ga];
        }
        Strategy::FLoRA => {
            let stacked_a = Matrix::vstack(&up_a)?;
            let scaled_b: Vec<Matrix> = up_b.iter().zip(&weights).map(|(b, w)| b.scale(*w)).collect();
            let stacked_b = Matrix::hstack(&scaled_b)?;
            let seed = fed.config.seed;
            for (i, c) in fed.clients.iter_mut().enumerate() {
                let got = fed.transport.download(round, i, &[&stacked_a, &stacked_b])?;
                let ClientState::Stacked { lora, folded } = c else { unreachable!() };
                folded.axpy(1.0, &got[1].matmul(&got[0])?)?;
                let mut rng = client_reinit_stream(seed, i, round);
                let r_i = lora.config.rank;
                let (a, b) = lora_mut(lora);
                *a = kaiming_uniform(r_i, d_in, &mut rng)?;
                b.fill(0.0);
            }
            fed.server.global = vec![stacked_a, stacked_b];
        }
        Strategy::FedALoRAHomog | Strategy::FedALoRAHetero | Strategy::FedSAHetero => unreachable!(),
    }
    Ok(fed.finish_round(round, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_single_and_pair() {
        let m = RngStream::new(1).gaussian_matrix(3, 2, 1.0);
        assert_eq!(aggregate(&[&m], &[1.0]).unwrap(), m);
        let z = Matrix::zeros(3, 2);
        let mid = aggregate(&[&m, &z], &[0.5, 0.5]).unwrap();
        assert!(mid.max_abs_diff(&m.scale(0.5)).unwrap() < 1e-15);
        assert!(aggregate(&[&m, &Matrix::zeros(2, 3)], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.name()), Some(s));
        }
    }

    #[test]
    fn config_validation_collects_problems() {
        let cfg = FedConfig {
            n_clients: 3,
            rounds: 1,
            strategy: Strategy::FedIT,
            ranks: vec![4, 2],
            d_m: 4,
            weights: Some(vec![0.5, 0.6, 0.1]),
            train: TrainConfig::default(),
            seed: 0,
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("ranks has 2 entries"), "{msg}");
        assert!(msg.contains("requires equal ranks"), "{msg}");
        assert!(msg.contains("sum to 1"), "{msg}");
    }
}
