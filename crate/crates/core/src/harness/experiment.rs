//! Experiment runner: turns a resolved config into files on disk.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::{write_echo, ExperimentConfig, ExperimentKind, ECHO_FILE};
use super::results::{
    config_hash, emit_gates, emit_ledger, emit_results, emit_summary, unix_now, Manifest, MetricRecord, GATES_FILE,
    LEDGER_FILE, METRICS_FILE, SUMMARY_FILE,
};
use crate::adapters::{init_adapter, AdapterConfig, AdapterState, Scheme};
use crate::analysis::{a_similarity, delta_m_percent, delta_mag_dir, gate_activation_log, subspace_similarity, GateRow, TaskScores};
use crate::error::{Error, Result};
use crate::fed::{comm_cost, ClientData, FedConfig, Federation, Geometry, LedgerEntry};
use crate::matcore::{derive_seed, Matrix, RngStream};
use crate::tasks::{evaluate, gen_suite, single_task_baselines, StepObserver, SyntheticSuite, TrainSession};

pub const CHECKPOINT_DIR: &str = "checkpoints";

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub summary: Value,
    /// Paths relative to `dir`, sorted.
    pub artifacts: Vec<String>,
}

/// Runs the experiment described by `cfg`, writing every artifact under
/// `cfg.output_dir`. On failure the MANIFEST is marked incomplete and the
/// partial artifacts are left in place.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let dir = PathBuf::from(&cfg.output_dir);
    write_echo(cfg, &dir)?;
    let hash = config_hash(&cfg.to_toml());
    let mut manifest = Manifest {
        kind: cfg.kind.name().to_string(),
        config_hash: hash.clone(),
        started_unix: unix_now(),
        finished_unix: None,
        error: None,
        artifacts: Vec::new(),
    };
    manifest.write(&dir)?;

    let outcome = match cfg.kind {
        ExperimentKind::Multitask => run_multitask(cfg, &dir),
        ExperimentKind::Federated => run_federated(cfg, &dir),
        ExperimentKind::Analysis => run_analysis(cfg, &dir),
        ExperimentKind::Commcost => run_commcost(cfg, &dir),
    }
    .and_then(|summary| {
        emit_summary(summary.clone(), &hash, &dir.join(SUMMARY_FILE))?;
        Ok(summary)
    });

    manifest.artifacts = list_artifacts(&dir);
    match outcome {
        Ok(summary) => {
            manifest.finished_unix = Some(unix_now());
            manifest.write(&dir)?;
            Ok(RunReport {
                dir,
                summary,
                artifacts: manifest.artifacts,
            })
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            // The original error matters more than a failure to record it.
            let _ = manifest.write(&dir);
            Err(e)
        }
    }
}

fn list_artifacts(dir: &Path) -> Vec<String> {
    fn walk(base: &Path, d: &Path, out: &mut Vec<String>) {
        let Ok(entries) = std::fs::read_dir(d) else { return };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if let Ok(rel) = p.strip_prefix(base) {
                let rel = rel.to_string_lossy().replace('\\', "/");
                if rel != super::results::MANIFEST_FILE {
                    out.push(rel);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

fn adapter_config(cfg: &ExperimentConfig, scheme: Scheme) -> AdapterConfig {
    AdapterConfig {
        scaling: cfg.adapter.scaling,
        ..AdapterConfig::new(scheme, cfg.suite.d_in, cfg.suite.d_out, cfg.adapter.rank, cfg.adapter.n_experts)
    }
}

/// Saves a checkpoint whenever the step counter hits one of `steps`.
struct CheckpointObserver {
    steps: Vec<u64>,
    dir: PathBuf,
    prefix: String,
    error: Option<Error>,
}

impl StepObserver<AdapterState> for CheckpointObserver {
    fn after_update(&mut self, session: &TrainSession<AdapterState>) {
        if self.error.is_none() && self.steps.contains(&session.step()) {
            let path = self.dir.join(format!("{}_step{}.ckpt", self.prefix, session.step()));
            if let Err(e) = save_checkpoint(&Checkpoint::from_session(session), &path) {
                self.error = Some(e);
            }
        }
    }
}

struct SchemeRun {
    scheme: Scheme,
    records: Vec<MetricRecord>,
    gates: Vec<(String, GateRow)>,
    summary: Value,
}

/// Init and shuffle seeds for one scheme's multi-task run.
pub fn multitask_seeds(master: u64, scheme: Scheme) -> (u64, u64) {
    let role = format!("experiment/{}", scheme.name());
    (derive_seed(master, &role, 0, 0), derive_seed(master, &role, 1, 0))
}

fn run_scheme(cfg: &ExperimentConfig, suite: &SyntheticSuite, baselines: &[f64], scheme: Scheme, dir: &Path) -> Result<SchemeRun> {
    let acfg = adapter_config(cfg, scheme);
    let (init_seed, shuffle_seed) = multitask_seeds(cfg.seed, scheme);
    let init = init_adapter(&acfg, &mut RngStream::new(init_seed))?;
    let tcfg = cfg.train_config().with_seed(shuffle_seed);
    let mut session = TrainSession::new(init, tcfg)?;
    let train = suite.train_union();
    let test = suite.test_union();
    let phase = format!("train/{}", scheme.name());
    let mut observer = CheckpointObserver {
        steps: cfg.checkpoints.steps.clone(),
        dir: dir.join(CHECKPOINT_DIR),
        prefix: scheme.name().to_string(),
        error: None,
    };
    let mut records = Vec::new();
    while session.epoch < session.config.epochs {
        let epoch = session.epoch;
        let loss = session.run_epoch(&suite.w0, &train, &mut observer)?;
        if let Some(e) = observer.error.take() {
            return Err(e);
        }
        records.push(MetricRecord::new(phase.clone(), "train_loss", loss).epoch(epoch));
        records.push(MetricRecord::new(phase.clone(), "test_mse", evaluate(&session.model, &suite.w0, &test)?).epoch(epoch));
    }
    save_checkpoint(
        &Checkpoint::from_session(&session),
        &dir.join(CHECKPOINT_DIR).join(format!("{}_final.ckpt", scheme.name())),
    )?;

    let task_mse = suite
        .tasks
        .iter()
        .map(|t| evaluate(&session.model, &suite.w0, &t.test))
        .collect::<Result<Vec<_>>>()?;
    let final_phase = format!("final/{}", scheme.name());
    for (k, v) in task_mse.iter().enumerate() {
        records.push(MetricRecord::new(final_phase.clone(), "test_mse", *v).task(k));
    }
    let dm = delta_m_percent(&TaskScores::lower_is_better(task_mse.clone(), baselines.to_vec())?);
    records.push(MetricRecord::new(final_phase, "delta_m_percent", dm));

    let mut gates = Vec::new();
    let mut gate_warning = Value::Null;
    if scheme.is_routed() {
        let (rows, warning) = gate_activation_log(&session.model, &test)?;
        gates = rows.into_iter().map(|r| (scheme.name().to_string(), r)).collect();
        if let Some(w) = warning {
            gate_warning = Value::String(w);
        }
    }
    let mean = task_mse.iter().sum::<f64>() / task_mse.len() as f64;
    Ok(SchemeRun {
        scheme,
        records,
        gates,
        summary: json!({
            "task_test_mse": task_mse,
            "mean_test_mse": mean,
            "delta_m_percent": dm,
            "trainable_params": acfg.trainable_count(),
            "steps": session.step(),
            "gate_warning": gate_warning,
        }),
    })
}

fn run_multitask(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let suite = gen_suite(&cfg.suite_config())?;
    let baseline_cfg = AdapterConfig {
        scaling: cfg.adapter.scaling,
        ..AdapterConfig::new(Scheme::Vanilla, cfg.suite.d_in, cfg.suite.d_out, cfg.adapter.rank, 1)
    };
    let baselines = single_task_baselines(&suite, &baseline_cfg, &cfg.train_config())?;
    let mut records: Vec<MetricRecord> = baselines
        .iter()
        .enumerate()
        .map(|(k, v)| MetricRecord::new("baseline", "test_mse", *v).task(k))
        .collect();

    let runs = cfg
        .schemes()
        .into_par_iter()
        .map(|s| run_scheme(cfg, &suite, &baselines, s, dir))
        .collect::<Result<Vec<_>>>()?;

    let mut gates = Vec::new();
    let mut schemes = Map::new();
    for run in runs {
        records.extend(run.records);
        gates.extend(run.gates);
        schemes.insert(run.scheme.name().to_string(), run.summary);
    }
    emit_results(&records, &dir.join(METRICS_FILE))?;
    if !gates.is_empty() {
        emit_gates(&gates, &dir.join(GATES_FILE))?;
    }
    Ok(json!({
        "kind": "multitask",
        "baseline_test_mse": baselines,
        "schemes": schemes,
    }))
}

/// Per-client datasets: client `i` holds task `i` of the suite.
pub fn client_data(suite: &SyntheticSuite) -> Vec<ClientData> {
    suite
        .tasks
        .iter()
        .map(|t| ClientData {
            train: t.train.clone(),
            test: t.test.clone(),
        })
        .collect()
}

pub fn fed_config(cfg: &ExperimentConfig, strategy: crate::fed::Strategy) -> FedConfig {
    FedConfig {
        n_clients: cfg.fed.n_clients,
        rounds: cfg.fed.rounds,
        strategy,
        ranks: cfg.fed.ranks.clone(),
        d_m: cfg.fed.d_m,
        weights: if cfg.fed.weights.is_empty() {
            None
        } else {
            Some(cfg.fed.weights.clone())
        },
        train: cfg.train_config(),
        seed: derive_seed(cfg.seed, "experiment/fed", 0, 0),
    }
}

fn run_federated(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let suite = gen_suite(&cfg.suite_config())?;
    let data = client_data(&suite);
    type StrategyRun = (Vec<MetricRecord>, Vec<(String, LedgerEntry)>, (String, Value));
    let runs = cfg
        .strategies()
        .into_par_iter()
        .map(|strategy| -> Result<StrategyRun> {
            let name = strategy.name().to_string();
            let phase = format!("fed/{name}");
            let mut fed = Federation::new(fed_config(cfg, strategy), suite.w0.clone())?;
            let mut records = Vec::new();
            while fed.round < fed.config.rounds {
                let report = fed.run_round(&data)?;
                let r = report.round;
                for (i, loss) in report.client_loss.iter().enumerate() {
                    records.push(MetricRecord::new(phase.clone(), "train_loss", *loss).round(r).client(i));
                    let mse = fed.client_mse(i, &data[i].test)?;
                    records.push(MetricRecord::new(phase.clone(), "test_mse", mse).round(r).client(i));
                }
                for e in fed.ledger().round(r) {
                    records.push(MetricRecord::new(phase.clone(), "upload", e.upload as f64).round(r).client(e.client));
                    records.push(
                        MetricRecord::new(phase.clone(), "download", e.download as f64).round(r).client(e.client),
                    );
                }
                for (k, norm) in report.global_norms.iter().enumerate() {
                    records.push(MetricRecord::new(phase.clone(), format!("global_norm{k}"), *norm).round(r));
                }
            }
            save_checkpoint(
                &Checkpoint::from_federation(&fed),
                &dir.join(CHECKPOINT_DIR).join(format!("{name}_round{}.ckpt", fed.round)),
            )?;
            let cross = fed.cross_mse(&data)?;
            let n = cross.len();
            for (i, row) in cross.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    records.push(MetricRecord::new(format!("cross/{name}"), "test_mse", *v).client(i).task(j));
                }
            }
            let mean_cross = cross.iter().flatten().sum::<f64>() / (n * n) as f64;
            let own = (0..n).map(|i| cross[i][i]).sum::<f64>() / n as f64;
            let ledger: Vec<(String, LedgerEntry)> =
                fed.ledger().entries.iter().map(|e| (name.clone(), *e)).collect();
            let summary = json!({
                "cross_test_mse": cross,
                "mean_cross_test_mse": mean_cross,
                "mean_own_test_mse": own,
                "total_upload": fed.ledger().total_upload(),
                "total_download": fed.ledger().total_download(),
            });
            Ok((records, ledger, (name, summary)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut ledger = Vec::new();
    let mut strategies = Map::new();
    for (r, l, (name, s)) in runs {
        records.extend(r);
        ledger.extend(l);
        strategies.insert(name, s);
    }
    emit_results(&records, &dir.join(METRICS_FILE))?;
    emit_ledger(&ledger, &dir.join(LEDGER_FILE))?;
    Ok(json!({ "kind": "federated", "strategies": strategies }))
}

/// True for matrices whose row space carries the meaning (input-side
/// factors and the router).
pub fn is_input_side(name: &str) -> bool {
    let leaf = name.rsplit('/').next().unwrap_or(name);
    leaf.starts_with('A') || leaf == "W_g"
}

/// Similarity and magnitude/direction drift between two matrices of one name.
pub fn compare_matrices(name: &str, before: &Matrix, after: &Matrix) -> Result<Value> {
    let sim = if is_input_side(name) {
        a_similarity(before, after)
    } else {
        subspace_similarity(before, after)
    };
    let md = delta_mag_dir(before, after)?;
    Ok(json!({
        "similarity": sim.as_ref().ok(),
        "similarity_note": sim.err().map(|e| e.to_string()),
        "delta_m": md.delta_m,
        "delta_d": md.delta_d,
        "undefined_columns": md.undefined_columns,
    }))
}

fn run_analysis(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let before = load_checkpoint(Path::new(&cfg.analysis.before))?;
    let after = load_checkpoint(Path::new(&cfg.analysis.after))?;
    let mut records = Vec::new();
    let mut matrices = Map::new();
    for (name, b) in &before.records {
        if name.starts_with("adam.") || name.starts_with("meta.") {
            continue;
        }
        let Some(a) = after.record(name) else { continue };
        if a.shape() != b.shape() {
            continue;
        }
        let report = compare_matrices(name, b, a)?;
        if let Some(s) = report["similarity"].as_f64() {
            records.push(MetricRecord::new("analysis", format!("similarity/{name}"), s));
        }
        for key in ["delta_m", "delta_d"] {
            if let Some(v) = report[key].as_f64() {
                records.push(MetricRecord::new("analysis", format!("{key}/{name}"), v));
            }
        }
        matrices.insert(name.clone(), report);
    }
    if matrices.is_empty() {
        return Err(Error::InvalidConfig(
            "analysis: the two checkpoints share no matrix of equal name and shape".into(),
        ));
    }
    emit_results(&records, &dir.join(METRICS_FILE))?;
    Ok(json!({
        "kind": "analysis",
        "before": { "tag": before.tag, "step": before.step, "round": before.round },
        "after": { "tag": after.tag, "step": after.step, "round": after.round },
        "matrices": matrices,
    }))
}

fn run_commcost(cfg: &ExperimentConfig, dir: &Path) -> Result<Value> {
    let c = &cfg.commcost;
    let geometry = Geometry {
        d_in: c.d_in,
        d_out: c.d_out,
        modules: c.modules,
    };
    let settings = [
        ("homogeneous", vec![c.homogeneous_rank; c.n_clients]),
        ("heterogeneous", c.heterogeneous_ranks.clone()),
    ];
    let mut records = Vec::new();
    let mut out = Map::new();
    for (label, ranks) in settings {
        let mut table = Map::new();
        for cost in comm_cost(geometry, &ranks, c.d_m) {
            let phase = format!("commcost/{label}");
            let s = cost.strategy.name();
            records.push(MetricRecord::new(phase.clone(), format!("{s}/upload_per_client"), cost.upload_per_client));
            records.push(MetricRecord::new(phase.clone(), format!("{s}/download_per_client"), cost.download_per_client));
            records.push(MetricRecord::new(phase, format!("{s}/total_millions"), cost.millions()));
            table.insert(
                s.to_string(),
                json!({
                    "upload_per_client": cost.upload_per_client,
                    "download_per_client": cost.download_per_client,
                    "total_millions": cost.millions(),
                    "total_millions_2dp": format!("{:.2}M", cost.millions()),
                }),
            );
        }
        out.insert(label.to_string(), json!({ "ranks": ranks, "strategies": table }));
    }
    emit_results(&records, &dir.join(METRICS_FILE))?;
    Ok(json!({ "kind": "commcost", "geometry": geometry, "d_m": c.d_m, "settings": out }))
}

/// Echo file path inside a run directory.
pub fn echo_path(dir: &Path) -> PathBuf {
    dir.join(ECHO_FILE)
}
