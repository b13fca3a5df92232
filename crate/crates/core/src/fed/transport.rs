//! In-process transport. Matrices cross the client/server boundary as
//! little-endian `f64` payloads and every crossing is counted, so the ledger
//! reports what was actually serialized rather than a formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::Matrix;

/// Scalar counts for one client in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub client: usize,
    pub upload: u64,
    pub download: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn total_upload(&self) -> u64 {
        self.entries.iter().map(|e| e.upload).sum()
    }

    pub fn total_download(&self) -> u64 {
        self.entries.iter().map(|e| e.download).sum()
    }

    pub fn round(&self, round: usize) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.iter().filter(move |e| e.round == round)
    }

    fn entry_mut(&mut self, round: usize, client: usize) -> &mut LedgerEntry {
        if let Some(i) = self.entries.iter().position(|e| e.round == round && e.client == client) {
            return &mut self.entries[i];
        }
        self.entries.push(LedgerEntry {
            round,
            client,
            upload: 0,
            download: 0,
        });
        self.entries.last_mut().expect("just pushed")
    }
}

/// Serialized matrix payload. The shape header is framing and is not counted.
#[derive(Clone, Debug)]
pub struct Packet {
    shapes: Vec<(usize, usize)>,
    body: Vec<u8>,
}

impl Packet {
    pub fn encode(mats: &[&Matrix]) -> Packet {
        let mut body = Vec::with_capacity(mats.iter().map(|m| m.len() * 8).sum());
        for m in mats {
            for v in m.as_slice() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        Packet {
            shapes: mats.iter().map(|m| m.shape()).collect(),
            body,
        }
    }

    /// Number of scalars carried.
    pub fn scalars(&self) -> u64 {
        (self.body.len() / 8) as u64
    }

    pub fn decode(&self) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(self.shapes.len());
        let mut chunks = self.body.chunks_exact(8);
        for &(r, c) in &self.shapes {
            let data: Vec<f64> = chunks
                .by_ref()
                .take(r * c)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            if data.len() != r * c {
                return Err(Error::shape("Packet::decode", "payload shorter than header"));
            }
            out.push(Matrix::from_vec(r, c, data)?);
        }
        Ok(out)
    }
}

/// Counts every payload passing through it into a [`CommLedger`].
#[derive(Clone, Debug, Default)]
pub struct Transport {
    pub ledger: CommLedger,
}

impl Transport {
    /// Client → server.
    pub fn upload(&mut self, round: usize, client: usize, mats: &[&Matrix]) -> Result<Vec<Matrix>> {
        let packet = Packet::encode(mats);
        self.ledger.entry_mut(round, client).upload += packet.scalars();
        packet.decode()
    }

    /// Server → client.
    pub fn download(&mut self, round: usize, client: usize, mats: &[&Matrix]) -> Result<Vec<Matrix>> {
        let packet = Packet::encode(mats);
        self.ledger.entry_mut(round, client).download += packet.scalars();
        packet.decode()
    }
}
