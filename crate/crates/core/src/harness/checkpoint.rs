//! Binary checkpoints. All integers and doubles are little-endian; the full
//! layout is documented in `docs/formats.md`:
//!
//! ```text
//! magic      8 bytes   "ALORACKP"
//! version    u32       currently 1
//! tag        u32 len + UTF-8 bytes (scheme or "fed/<strategy>")
//! round      u64
//! epoch      u64
//! step       u64
//! batch      u64       mini-batches of `epoch` already applied
//! rng seed   u64
//! rng cursor u128      word position of the shuffle stream at epoch start
//! count      u32       number of matrix records
//! record*    u32 len + UTF-8 name, u64 rows, u64 cols, rows*cols f64 (row-major)
//! ```
//!
//! Nothing may follow the last record.

use std::path::Path;

use crate::adapters::{AdapterConfig, AdapterState, Factors, LowRankModel, Scheme};
use crate::error::{Error, Result};
use crate::fed::{FedConfig, Federation};
use crate::matcore::{Matrix, RngStream};
use crate::tasks::{OptimizerState, TrainConfig, TrainSession};

pub const MAGIC: [u8; 8] = *b"ALORACKP";
pub const VERSION: u32 = 1;

/// Record holding the adapter branch multiplier as a 1x1 matrix.
pub const SCALING_RECORD: &str = "meta.scaling";
const FIRST_MOMENT: &str = "adam.m/";
const SECOND_MOMENT: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tag: String,
    pub round: u64,
    pub epoch: u64,
    pub step: u64,
    pub batch: u64,
    pub rng_seed: u64,
    pub rng_cursor: u128,
    pub records: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Option<&Matrix> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.tag);
        for v in [self.round, self.epoch, self.step, self.batch, self.rng_seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.rng_cursor.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, m) in &self.records {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(r.fail(0, "bad magic header"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(8, format!("unsupported version {version}, expected {VERSION}")));
        }
        let tag = r.string("tag")?;
        let round = r.u64("round")?;
        let epoch = r.u64("epoch")?;
        let step = r.u64("step")?;
        let batch = r.u64("batch")?;
        let rng_seed = r.u64("rng seed")?;
        let rng_cursor = u128::from_le_bytes(r.take(16, "rng cursor")?.try_into().expect("16 bytes"));
        let count = r.u32("record count")?;
        let mut records = Vec::new();
        for _ in 0..count {
            let name = r.string("record name")?;
            let at = r.pos;
            let rows = r.u64("rows")?;
            let cols = r.u64("cols")?;
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .filter(|n| *n <= (r.bytes.len() - r.pos) as u64)
                .ok_or_else(|| r.fail(at as u64, format!("record {name}: {rows}x{cols} exceeds remaining bytes")))?;
            let raw = r.take(len as usize, "values")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_vec(rows as usize, cols as usize, data)?;
            records.push((name, m));
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            tag,
            round,
            epoch,
            step,
            batch,
            rng_seed,
            rng_cursor,
            records,
        })
    }

    /// Full resumable state of an adapter training session.
    pub fn from_session(session: &TrainSession<AdapterState>) -> Checkpoint {
        let model = &session.model;
        let names = model.param_names();
        let mut records: Vec<(String, Matrix)> = names
            .iter()
            .cloned()
            .zip(model.params().into_iter().cloned())
            .collect();
        for (name, m) in names.iter().zip(&session.optimizer.first) {
            records.push((format!("{FIRST_MOMENT}{name}"), m.clone()));
        }
        for (name, m) in names.iter().zip(&session.optimizer.second) {
            records.push((format!("{SECOND_MOMENT}{name}"), m.clone()));
        }
        records.push((
            SCALING_RECORD.to_string(),
            Matrix::from_vec(1, 1, vec![model.config.scaling]).expect("1x1"),
        ));
        Checkpoint {
            tag: model.scheme().name().to_string(),
            round: 0,
            epoch: session.epoch as u64,
            step: session.optimizer.step,
            batch: session.batches_done as u64,
            rng_seed: session.rng.seed(),
            rng_cursor: session.rng.cursor(),
            records,
        }
    }

    /// Rebuilds the adapter stored in this checkpoint (ignores optimizer records).
    pub fn adapter_state(&self) -> Result<AdapterState> {
        let scheme = Scheme::parse(&self.tag)
            .ok_or_else(|| Error::InvalidConfig(format!("checkpoint tag {:?} is not an adapter scheme", self.tag)))?;
        let get = |name: &str| {
            self.record(name)
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks matrix {name}")))
        };
        let count = |prefix: &str| {
            (0..)
                .take_while(|i| self.record(&format!("{prefix}{i}")).is_some())
                .count()
        };
        let scaling = get(SCALING_RECORD)?.as_slice()[0];
        let factors = match scheme {
            Scheme::Vanilla => Factors::Vanilla {
                a: get("A")?,
                b: get("B")?,
            },
            Scheme::SharingA => Factors::SharingA {
                a: get("A")?,
                b: (0..count("B")).map(|i| get(&format!("B{i}"))).collect::<Result<_>>()?,
                gate: get("W_g")?,
            },
            Scheme::ALoRA => Factors::ALoRA {
                a: (0..count("A")).map(|i| get(&format!("A{i}"))).collect::<Result<_>>()?,
                b: get("B")?,
                gate: get("W_g")?,
            },
        };
        let mats = factors.matrices();
        let (rank, d_in) = mats[0].shape();
        let d_out = match &factors {
            Factors::Vanilla { b, .. } | Factors::ALoRA { b, .. } => b.rows(),
            Factors::SharingA { b, .. } => b.first().map_or(0, Matrix::rows),
        };
        let n_experts = match &factors {
            Factors::Vanilla { .. } => 1,
            Factors::SharingA { b, .. } => b.len(),
            Factors::ALoRA { a, .. } => a.len(),
        };
        let config = AdapterConfig {
            d_in,
            d_out,
            rank,
            n_experts,
            scheme,
            scaling,
        };
        config.validate()?;
        // Shape check against a freshly structured state.
        let template = crate::adapters::init_adapter(&config, &mut RngStream::new(0))?;
        let factors = template.factors.with_matrices(factors.matrices().into_iter().cloned().collect())?;
        Ok(AdapterState { config, factors })
    }

    /// Resumes the session captured by [`Checkpoint::from_session`]. The
    /// stored shuffle stream takes precedence over `config.seed`.
    pub fn resume_session(&self, config: TrainConfig) -> Result<TrainSession<AdapterState>> {
        let model = self.adapter_state()?;
        let names = model.param_names();
        let moments = |prefix: &str| {
            names
                .iter()
                .map(|n| {
                    self.record(&format!("{prefix}{n}"))
                        .cloned()
                        .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks optimizer record {prefix}{n}")))
                })
                .collect::<Result<Vec<_>>>()
        };
        let optimizer = OptimizerState {
            step: self.step,
            first: moments(FIRST_MOMENT)?,
            second: moments(SECOND_MOMENT)?,
        };
        for (p, m) in model.params().iter().zip(optimizer.first.iter().chain(&optimizer.second)) {
            if p.shape() != m.shape() {
                return Err(Error::shape("resume_session", format!("moment {:?} vs param {:?}", m.shape(), p.shape())));
            }
        }
        config.validate()?;
        Ok(TrainSession {
            model,
            optimizer,
            rng: RngStream::at(self.rng_seed, self.rng_cursor),
            epoch: self.epoch as usize,
            batches_done: self.batch as usize,
            config,
        })
    }

    /// Federated state at a round boundary.
    pub fn from_federation(fed: &Federation) -> Checkpoint {
        Checkpoint {
            tag: format!("fed/{}", fed.config.strategy.name()),
            round: fed.round as u64,
            epoch: 0,
            step: 0,
            batch: 0,
            rng_seed: fed.config.seed,
            rng_cursor: 0,
            records: fed.named_matrices(),
        }
    }

    pub fn to_federation(&self, config: FedConfig, w0: Matrix) -> Result<Federation> {
        let expected = format!("fed/{}", config.strategy.name());
        if self.tag != expected {
            return Err(Error::InvalidConfig(format!("checkpoint tag {:?}, config expects {expected:?}", self.tag)));
        }
        if self.rng_seed != config.seed {
            return Err(Error::InvalidConfig(format!(
                "checkpoint seed {} differs from config seed {}",
                self.rng_seed, config.seed
            )));
        }
        Federation::restore(config, w0, self.round as usize, &self.records)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: u64, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos as u64;
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail(at, format!("{what} is not UTF-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = RngStream::new(4);
        Checkpoint {
            tag: "alora".into(),
            round: 1,
            epoch: 2,
            step: 3,
            batch: 4,
            rng_seed: 5,
            rng_cursor: (1u128 << 70) + 6,
            records: vec![
                ("x".into(), rng.gaussian_matrix(2, 3, 1.0)),
                ("empty".into(), Matrix::zeros(0, 4)),
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().encode();
        for cut in [0, 5, 11, 20, bytes.len() - 1] {
            let err = Checkpoint::decode(&bytes[..cut]).unwrap_err();
            match err {
                Error::Checkpoint { offset, .. } => assert!(offset <= cut as u64),
                other => panic!("{other}"),
            }
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        let mut bytes = sample().encode();
        bytes[8] = 9;
        let msg = Checkpoint::decode(&bytes).unwrap_err().to_string();
        assert!(msg.contains("version 9") && msg.contains("offset 8"), "{msg}");
        let mut bytes = sample().encode();
        bytes[0] = b'X';
        assert!(Checkpoint::decode(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = sample().encode();
        bytes.push(0);
        assert!(Checkpoint::decode(&bytes).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn absurd_dimensions_are_rejected_without_allocating() {
        let c = Checkpoint {
            records: vec![("x".into(), Matrix::zeros(1, 1))],
            ..sample()
        };
        let mut bytes = c.encode();
        let rows_at = bytes.len() - 8 - 16;
        bytes[rows_at..rows_at + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        let msg = Checkpoint::decode(&bytes).unwrap_err().to_string();
        assert!(msg.contains("exceeds remaining bytes"), "{msg}");
    }
}
