//! Result files. Tables are comma-separated with a header row, '.' decimals
//! and every number printed as `{:.16e}` (17 significant digits), so parsing
//! a table back reproduces the values bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::GateRow;
use crate::error::{Error, Result};
use crate::fed::LedgerEntry;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GATES_FILE: &str = "gates.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const MANIFEST_FILE: &str = "MANIFEST";

/// Column set of the metrics table, in order.
pub const METRIC_COLUMNS: [&str; 7] = ["phase", "round", "epoch", "client", "task", "metric", "value"];

/// One row of the long-format metrics table. Empty optional fields mean
/// "not applicable".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: String,
    pub round: Option<u64>,
    pub epoch: Option<u64>,
    pub client: Option<u64>,
    pub task: Option<u64>,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(phase: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        MetricRecord {
            phase: phase.into(),
            round: None,
            epoch: None,
            client: None,
            task: None,
            metric: metric.into(),
            value,
        }
    }

    pub fn round(mut self, r: usize) -> Self {
        self.round = Some(r as u64);
        self
    }

    pub fn epoch(mut self, e: usize) -> Self {
        self.epoch = Some(e as u64);
        self
    }

    pub fn client(mut self, c: usize) -> Self {
        self.client = Some(c as u64);
        self
    }

    pub fn task(mut self, t: usize) -> Self {
        self.task = Some(t as u64);
        self
    }
}

/// Locale-independent, lossless number formatting.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Results(format!("{}: {e}", path.display()))
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the metrics table. An empty slice yields a header-only file.
pub fn emit_results(records: &[MetricRecord], path: &Path) -> Result<()> {
    let header: Vec<String> = METRIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    write_table(
        path,
        &header,
        records.iter().map(|r| {
            vec![
                r.phase.clone(),
                opt(r.round),
                opt(r.epoch),
                opt(r.client),
                opt(r.task),
                r.metric.clone(),
                format_number(r.value),
            ]
        }),
    )
}

pub fn read_results(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRIC_COLUMNS.iter().copied()) {
        return Err(Error::Results(format!("{}: unexpected header {header:?}", path.display())));
    }
    let parse_opt = |s: &str| -> Result<Option<u64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Results(format!("{}: bad integer {s:?}", path.display())))
        }
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let value = row[6]
            .parse()
            .map_err(|_| Error::Results(format!("{}: bad number {:?}", path.display(), &row[6])))?;
        out.push(MetricRecord {
            phase: row[0].to_string(),
            round: parse_opt(&row[1])?,
            epoch: parse_opt(&row[2])?,
            client: parse_opt(&row[3])?,
            task: parse_opt(&row[4])?,
            metric: row[5].to_string(),
            value,
        });
    }
    Ok(out)
}

/// Gate table: `scheme, sample_id, task_id, layer_id, w0 .. w{n-1}`.
pub fn emit_gates(rows: &[(String, GateRow)], path: &Path) -> Result<()> {
    let n = rows.iter().map(|(_, r)| r.weights.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["scheme", "sample_id", "task_id", "layer_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("w{i}")));
    write_table(
        path,
        &header,
        rows.iter().map(|(scheme, r)| {
            let mut v = vec![
                scheme.clone(),
                r.sample_id.to_string(),
                r.task_id.to_string(),
                r.layer_id.to_string(),
            ];
            v.extend(r.weights.iter().map(|w| format_number(*w)));
            v.resize(4 + n, String::new());
            v
        }),
    )
}

/// Ledger table: `strategy, round, client, upload, download`.
pub fn emit_ledger(rows: &[(String, LedgerEntry)], path: &Path) -> Result<()> {
    let header: Vec<String> = ["strategy", "round", "client", "upload", "download"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_table(
        path,
        &header,
        rows.iter().map(|(s, e)| {
            vec![
                s.clone(),
                e.round.to_string(),
                e.client.to_string(),
                e.upload.to_string(),
                e.download.to_string(),
            ]
        }),
    )
}

/// Hex SHA-256 of the resolved config text.
pub fn config_hash(resolved_toml: &str) -> String {
    hex::encode(Sha256::digest(resolved_toml.as_bytes()))
}

/// Writes `summary` with `config_hash` added at the top level.
pub fn emit_summary(mut summary: serde_json::Value, hash: &str, path: &Path) -> Result<()> {
    if let Some(obj) = summary.as_object_mut() {
        obj.insert("config_hash".into(), serde_json::Value::String(hash.to_string()));
    }
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Results(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Run status file. The only artifact that carries wall-clock time.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub kind: String,
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn is_complete(&self) -> bool {
        self.finished_unix.is_some() && self.error.is_none()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "status: {}\nkind: {}\nconfig_hash: {}\nstarted_unix: {}\n",
            if self.is_complete() { "complete" } else { "incomplete" },
            self.kind,
            self.config_hash,
            self.started_unix
        );
        if let Some(f) = self.finished_unix {
            s += &format!("finished_unix: {f}\n");
        }
        if let Some(e) = &self.error {
            s += &format!("error: {}\n", e.replace('\n', " | "));
        }
        for a in &self.artifacts {
            s += &format!("artifact: {a}\n");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        emit_results(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "phase,round,epoch,client,task,metric,value\n");
        assert!(read_results(&p).unwrap().is_empty());
    }

    #[test]
    fn values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, f64::MAX, f64::MIN_POSITIVE, 123456789.12345679, 0.0];
        let recs: Vec<MetricRecord> = vals
            .iter()
            .enumerate()
            .map(|(i, v)| MetricRecord::new("train", "loss", *v).epoch(i).task(2))
            .collect();
        emit_results(&recs, &p).unwrap();
        let back = read_results(&p).unwrap();
        assert_eq!(back, recs);
        for (a, b) in back.iter().zip(&vals) {
            assert_eq!(a.value.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            config_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_status() {
        let mut m = Manifest {
            kind: "multitask".into(),
            config_hash: "x".into(),
            started_unix: 1,
            finished_unix: None,
            error: None,
            artifacts: vec![],
        };
        assert!(m.render().starts_with("status: incomplete"));
        m.finished_unix = Some(2);
        assert!(m.render().starts_with("status: complete"));
        m.error = Some("boom".into());
        assert!(m.render().starts_with("status: incomplete"));
    }
}
