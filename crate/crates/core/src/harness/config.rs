//! Experiment configuration in TOML. Every key is optional and falls back to
//! the documented default; unknown keys and constraint violations are all
//! collected and reported together. See `configs/annotated.toml` for the full
//! key reference.

use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use crate::adapters::Scheme;
use crate::error::{Error, Result};
use crate::fed::Strategy;
use crate::tasks::{Family, Optimizer, SuiteConfig, TrainConfig};

/// File name of the resolved-config echo written into every output directory.
pub const ECHO_FILE: &str = "config.resolved.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Multitask,
    Federated,
    Analysis,
    Commcost,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Multitask => "multitask",
            ExperimentKind::Federated => "federated",
            ExperimentKind::Analysis => "analysis",
            ExperimentKind::Commcost => "commcost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ExperimentKind::Multitask,
            ExperimentKind::Federated,
            ExperimentKind::Analysis,
            ExperimentKind::Commcost,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSection {
    pub n_tasks: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub true_rank: usize,
    pub family: String,
    pub noise: f64,
    pub samples_per_task: usize,
    pub input_shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdapterSection {
    pub rank: usize,
    pub n_experts: usize,
    pub scaling: f64,
    pub schemes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSection {
    pub optimizer: String,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FedSection {
    pub n_clients: usize,
    pub rounds: usize,
    pub strategies: Vec<String>,
    pub ranks: Vec<usize>,
    pub d_m: usize,
    /// Empty means uniform.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisSection {
    pub before: String,
    pub after: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommcostSection {
    pub d_in: usize,
    pub d_out: usize,
    pub modules: usize,
    pub n_clients: usize,
    pub homogeneous_rank: usize,
    pub heterogeneous_ranks: Vec<usize>,
    pub d_m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointSection {
    /// Optimizer steps after which a checkpoint is written; the final state
    /// is always saved.
    pub steps: Vec<u64>,
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output_dir: String,
    pub suite: SuiteSection,
    pub adapter: AdapterSection,
    pub train: TrainSection,
    pub fed: FedSection,
    pub analysis: AnalysisSection,
    pub commcost: CommcostSection,
    pub checkpoints: CheckpointSection,
}

impl ExperimentConfig {
    /// Defaults for a kind, before any file is read.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let s = SuiteConfig::default();
        let t = TrainConfig::default();
        let (beta1, beta2, eps) = match Optimizer::adam() {
            Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
            Optimizer::Sgd => unreachable!(),
        };
        let mut cfg = ExperimentConfig {
            kind,
            seed: 0,
            output_dir: format!("runs/{}", kind.name()),
            suite: SuiteSection {
                n_tasks: s.n_tasks,
                d_in: s.d_in,
                d_out: s.d_out,
                true_rank: s.true_rank,
                family: s.family.name().to_string(),
                noise: s.noise,
                samples_per_task: s.samples_per_task,
                input_shift: s.input_shift,
            },
            adapter: AdapterSection {
                rank: 4,
                n_experts: 3,
                scaling: 1.0,
                schemes: vec!["sharing_a".into(), "alora".into()],
            },
            train: TrainSection {
                optimizer: "adam".into(),
                lr: t.lr,
                epochs: t.epochs,
                batch_size: t.batch_size,
                beta1,
                beta2,
                eps,
            },
            fed: FedSection {
                n_clients: 4,
                rounds: 5,
                strategies: vec!["fed_alora_homog".into(), "fedsa".into()],
                ranks: vec![4; 4],
                d_m: 4,
                weights: Vec::new(),
            },
            analysis: AnalysisSection {
                before: String::new(),
                after: String::new(),
            },
            commcost: CommcostSection {
                d_in: 4096,
                d_out: 4096,
                modules: 64,
                n_clients: 8,
                homogeneous_rank: 8,
                heterogeneous_ranks: vec![64, 64, 32, 32, 16, 16, 8, 8],
                d_m: 16,
            },
            checkpoints: CheckpointSection { steps: vec![2] },
        };
        if kind == ExperimentKind::Federated {
            // One task per client.
            cfg.suite.n_tasks = cfg.fed.n_clients;
        }
        cfg
    }

    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig {
            n_tasks: self.suite.n_tasks,
            d_in: self.suite.d_in,
            d_out: self.suite.d_out,
            true_rank: self.suite.true_rank,
            family: parse_family(&self.suite.family).expect("validated"),
            noise: self.suite.noise,
            samples_per_task: self.suite.samples_per_task,
            input_shift: self.suite.input_shift,
            seed: crate::matcore::derive_seed(self.seed, "experiment/suite", 0, 0),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let optimizer = match self.train.optimizer.as_str() {
            "sgd" => Optimizer::Sgd,
            _ => Optimizer::Adam {
                beta1: self.train.beta1,
                beta2: self.train.beta2,
                eps: self.train.eps,
            },
        };
        TrainConfig {
            optimizer,
            lr: self.train.lr,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: crate::matcore::derive_seed(self.seed, "experiment/train", 0, 0),
        }
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        self.adapter.schemes.iter().filter_map(|s| Scheme::parse(s)).collect()
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        self.fed.strategies.iter().filter_map(|s| Strategy::parse(s)).collect()
    }

    /// The resolved config as TOML; parsing this text yields `self` again.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Every constraint violation, each naming the offending key(s).
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.seed > i64::MAX as u64 {
            p.push(format!("seed: {} exceeds the TOML integer range", self.seed));
        }
        if self.output_dir.is_empty() {
            p.push("output_dir: must not be empty".into());
        }
        let s = &self.suite;
        positive(&mut p, "suite.n_tasks", s.n_tasks);
        positive(&mut p, "suite.d_in", s.d_in);
        positive(&mut p, "suite.d_out", s.d_out);
        positive(&mut p, "suite.samples_per_task", s.samples_per_task);
        if s.true_rank == 0 || s.true_rank > s.d_in.min(s.d_out) {
            p.push(format!(
                "suite.true_rank: {} must lie in [1, min(suite.d_in, suite.d_out)]",
                s.true_rank
            ));
        }
        if parse_family(&s.family).is_none() {
            p.push(format!(
                "suite.family: unknown family {:?} (shared_b, shared_a, independent)",
                s.family
            ));
        }
        if !(s.noise.is_finite() && s.noise >= 0.0) {
            p.push(format!("suite.noise: {} must be finite and >= 0", s.noise));
        }
        if !(s.input_shift.is_finite() && s.input_shift >= 0.0) {
            p.push(format!("suite.input_shift: {} must be finite and >= 0", s.input_shift));
        }
        if s.samples_per_task > 0 && (s.samples_per_task * 4 / 5 == 0 || s.samples_per_task * 4 / 5 == s.samples_per_task) {
            p.push("suite.samples_per_task: too few samples for an 80/20 split".into());
        }

        let a = &self.adapter;
        if a.rank == 0 || a.rank > s.d_in.min(s.d_out) {
            p.push(format!("adapter.rank: {} must lie in [1, min(suite.d_in, suite.d_out)]", a.rank));
        }
        positive(&mut p, "adapter.n_experts", a.n_experts);
        if !a.scaling.is_finite() {
            p.push("adapter.scaling: must be finite".into());
        }
        for name in &a.schemes {
            if Scheme::parse(name).is_none() {
                p.push(format!("adapter.schemes: unknown scheme {name:?} (vanilla, sharing_a, alora)"));
            }
        }

        let t = &self.train;
        if !matches!(t.optimizer.as_str(), "adam" | "sgd") {
            p.push(format!("train.optimizer: unknown optimizer {:?} (adam, sgd)", t.optimizer));
        }
        if !(t.lr.is_finite() && t.lr >= 0.0) {
            p.push(format!("train.lr: {} must be finite and >= 0", t.lr));
        }
        positive(&mut p, "train.epochs", t.epochs);
        positive(&mut p, "train.batch_size", t.batch_size);
        if !(0.0..1.0).contains(&t.beta1) {
            p.push(format!("train.beta1: {} must lie in [0, 1)", t.beta1));
        }
        if !(0.0..1.0).contains(&t.beta2) {
            p.push(format!("train.beta2: {} must lie in [0, 1)", t.beta2));
        }
        if !(t.eps.is_finite() && t.eps > 0.0) {
            p.push(format!("train.eps: {} must be positive", t.eps));
        }

        let f = &self.fed;
        positive(&mut p, "fed.n_clients", f.n_clients);
        positive(&mut p, "fed.rounds", f.rounds);
        if f.ranks.len() != f.n_clients {
            p.push(format!(
                "fed.ranks: has {} entries but fed.n_clients is {}",
                f.ranks.len(),
                f.n_clients
            ));
        }
        if f.ranks.iter().any(|r| *r == 0 || *r > s.d_in.min(s.d_out)) {
            p.push("fed.ranks: every rank must lie in [1, min(suite.d_in, suite.d_out)]".into());
        }
        let equal = f.ranks.windows(2).all(|w| w[0] == w[1]);
        for name in &f.strategies {
            match Strategy::parse(name) {
                None => p.push(format!("fed.strategies: unknown strategy {name:?}")),
                Some(st) if st.requires_equal_ranks() && !equal => {
                    p.push(format!("fed.strategies: {name} requires equal fed.ranks"))
                }
                Some(_) => {}
            }
        }
        positive(&mut p, "fed.d_m", f.d_m);
        if !f.weights.is_empty() {
            if f.weights.len() != f.n_clients {
                p.push(format!(
                    "fed.weights: has {} entries but fed.n_clients is {}",
                    f.weights.len(),
                    f.n_clients
                ));
            }
            if f.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (f.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                p.push("fed.weights: must be non-negative and sum to 1".into());
            }
        }
        if self.kind == ExperimentKind::Federated && f.n_clients != s.n_tasks {
            p.push(format!(
                "fed.n_clients ({}) must equal suite.n_tasks ({}): each client holds one task",
                f.n_clients, s.n_tasks
            ));
        }

        if self.kind == ExperimentKind::Analysis {
            if self.analysis.before.is_empty() {
                p.push("analysis.before: required for kind = \"analysis\"".into());
            }
            if self.analysis.after.is_empty() {
                p.push("analysis.after: required for kind = \"analysis\"".into());
            }
        }

        let c = &self.commcost;
        positive(&mut p, "commcost.d_in", c.d_in);
        positive(&mut p, "commcost.d_out", c.d_out);
        positive(&mut p, "commcost.modules", c.modules);
        positive(&mut p, "commcost.n_clients", c.n_clients);
        positive(&mut p, "commcost.homogeneous_rank", c.homogeneous_rank);
        positive(&mut p, "commcost.d_m", c.d_m);
        if c.heterogeneous_ranks.is_empty() || c.heterogeneous_ranks.contains(&0) {
            p.push("commcost.heterogeneous_ranks: needs at least one positive rank".into());
        }
        p
    }
}

fn positive(problems: &mut Vec<String>, key: &str, v: usize) {
    if v == 0 {
        problems.push(format!("{key}: must be >= 1"));
    }
}

pub fn parse_family(s: &str) -> Option<Family> {
    [Family::SharedB, Family::SharedA, Family::Independent]
        .into_iter()
        .find(|f| f.name() == s)
}

/// Reads, resolves and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("TOML syntax: {}", e.message())]))?;
    let mut errs = Vec::new();
    let kind = match table.get("kind") {
        None => {
            errs.push("kind: required (multitask, federated, analysis, commcost)".to_string());
            ExperimentKind::Multitask
        }
        Some(Value::String(s)) => ExperimentKind::parse(s).unwrap_or_else(|| {
            errs.push(format!("kind: unknown kind {s:?} (multitask, federated, analysis, commcost)"));
            ExperimentKind::Multitask
        }),
        Some(_) => {
            errs.push("kind: expected a string".into());
            ExperimentKind::Multitask
        }
    };
    let mut cfg = ExperimentConfig::defaults(kind);
    let mut r = Resolver { errs: &mut errs };

    for (key, value) in &table {
        match key.as_str() {
            "kind" => {}
            "seed" => r.u64(key, value, &mut cfg.seed),
            "output_dir" => r.string(key, value, &mut cfg.output_dir),
            "suite" => r.section(key, value, |r, k, v| {
                let s = &mut cfg.suite;
                match k {
                    "n_tasks" => r.usize(k, v, &mut s.n_tasks),
                    "d_in" => r.usize(k, v, &mut s.d_in),
                    "d_out" => r.usize(k, v, &mut s.d_out),
                    "true_rank" => r.usize(k, v, &mut s.true_rank),
                    "family" => r.string(k, v, &mut s.family),
                    "noise" => r.f64(k, v, &mut s.noise),
                    "samples_per_task" => r.usize(k, v, &mut s.samples_per_task),
                    "input_shift" => r.f64(k, v, &mut s.input_shift),
                    _ => return false,
                }
                true
            }),
            "adapter" => r.section(key, value, |r, k, v| {
                let a = &mut cfg.adapter;
                match k {
                    "rank" => r.usize(k, v, &mut a.rank),
                    "n_experts" => r.usize(k, v, &mut a.n_experts),
                    "scaling" => r.f64(k, v, &mut a.scaling),
                    "schemes" => r.strings(k, v, &mut a.schemes),
                    _ => return false,
                }
                true
            }),
            "train" => r.section(key, value, |r, k, v| {
                let t = &mut cfg.train;
                match k {
                    "optimizer" => r.string(k, v, &mut t.optimizer),
                    "lr" => r.f64(k, v, &mut t.lr),
                    "epochs" => r.usize(k, v, &mut t.epochs),
                    "batch_size" => r.usize(k, v, &mut t.batch_size),
                    "beta1" => r.f64(k, v, &mut t.beta1),
                    "beta2" => r.f64(k, v, &mut t.beta2),
                    "eps" => r.f64(k, v, &mut t.eps),
                    _ => return false,
                }
                true
            }),
            "fed" => r.section(key, value, |r, k, v| {
                let f = &mut cfg.fed;
                match k {
                    "n_clients" => r.usize(k, v, &mut f.n_clients),
                    "rounds" => r.usize(k, v, &mut f.rounds),
                    "strategies" => r.strings(k, v, &mut f.strategies),
                    "ranks" => r.usizes(k, v, &mut f.ranks),
                    "d_m" => r.usize(k, v, &mut f.d_m),
                    "weights" => r.f64s(k, v, &mut f.weights),
                    _ => return false,
                }
                true
            }),
            "analysis" => r.section(key, value, |r, k, v| {
                let a = &mut cfg.analysis;
                match k {
                    "before" => r.string(k, v, &mut a.before),
                    "after" => r.string(k, v, &mut a.after),
                    _ => return false,
                }
                true
            }),
            "commcost" => r.section(key, value, |r, k, v| {
                let c = &mut cfg.commcost;
                match k {
                    "d_in" => r.usize(k, v, &mut c.d_in),
                    "d_out" => r.usize(k, v, &mut c.d_out),
                    "modules" => r.usize(k, v, &mut c.modules),
                    "n_clients" => r.usize(k, v, &mut c.n_clients),
                    "homogeneous_rank" => r.usize(k, v, &mut c.homogeneous_rank),
                    "heterogeneous_ranks" => r.usizes(k, v, &mut c.heterogeneous_ranks),
                    "d_m" => r.usize(k, v, &mut c.d_m),
                    _ => return false,
                }
                true
            }),
            "checkpoints" => r.section(key, value, |r, k, v| {
                match k {
                    "steps" => {
                        let mut steps: Vec<usize> = Vec::new();
                        r.usizes(k, v, &mut steps);
                        cfg.checkpoints.steps = steps.into_iter().map(|s| s as u64).collect();
                    }
                    _ => return false,
                }
                true
            }),
            other => r.errs.push(format!("{other}: unknown key")),
        }
    }
    // Keys that failed to resolve kept their defaults; constraint checks that
    // mention them would only add noise.
    let flagged: Vec<String> = errs.iter().filter_map(|e| e.split(':').next()).map(str::to_string).collect();
    errs.extend(
        cfg.problems()
            .into_iter()
            .filter(|p| !flagged.iter().any(|k| p.contains(k.as_str()))),
    );
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

/// Writes the resolved config into `dir` and returns its path.
pub fn write_echo(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(ECHO_FILE);
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

struct Resolver<'e> {
    errs: &'e mut Vec<String>,
}

impl Resolver<'_> {
    /// Visits every key of a sub-table; `visit` returns false for unknown keys.
    fn section(&mut self, name: &str, value: &Value, mut visit: impl FnMut(&mut Resolver<'_>, &str, &Value) -> bool) {
        let Value::Table(t) = value else {
            self.errs.push(format!("{name}: expected a table"));
            return;
        };
        for (k, v) in t {
            let mut sub_errs = Vec::new();
            let known = visit(&mut Resolver { errs: &mut sub_errs }, k, v);
            if !known {
                self.errs.push(format!("{name}.{k}: unknown key"));
            }
            self.errs.extend(sub_errs.into_iter().map(|e| format!("{name}.{e}")));
        }
    }

    fn usize(&mut self, key: &str, v: &Value, out: &mut usize) {
        match v.as_integer() {
            Some(i) if i >= 0 => *out = i as usize,
            _ => self.errs.push(format!("{key}: expected a non-negative integer")),
        }
    }

    fn u64(&mut self, key: &str, v: &Value, out: &mut u64) {
        match v.as_integer() {
            Some(i) if i >= 0 => *out = i as u64,
            _ => self.errs.push(format!("{key}: expected a non-negative integer")),
        }
    }

    fn f64(&mut self, key: &str, v: &Value, out: &mut f64) {
        match v {
            Value::Float(f) => *out = *f,
            Value::Integer(i) => *out = *i as f64,
            _ => self.errs.push(format!("{key}: expected a number")),
        }
    }

    fn string(&mut self, key: &str, v: &Value, out: &mut String) {
        match v.as_str() {
            Some(s) => *out = s.to_string(),
            None => self.errs.push(format!("{key}: expected a string")),
        }
    }

    fn strings(&mut self, key: &str, v: &Value, out: &mut Vec<String>) {
        match v.as_array().and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect()) {
            Some(list) => *out = list,
            None => self.errs.push(format!("{key}: expected an array of strings")),
        }
    }

    fn usizes(&mut self, key: &str, v: &Value, out: &mut Vec<usize>) {
        let parsed: Option<Vec<usize>> = v.as_array().and_then(|a| {
            a.iter()
                .map(|x| x.as_integer().filter(|i| *i >= 0).map(|i| i as usize))
                .collect()
        });
        match parsed {
            Some(list) => *out = list,
            None => self.errs.push(format!("{key}: expected an array of non-negative integers")),
        }
    }

    fn f64s(&mut self, key: &str, v: &Value, out: &mut Vec<f64>) {
        let parsed: Option<Vec<f64>> = v.as_array().and_then(|a| {
            a.iter()
                .map(|x| match x {
                    Value::Float(f) => Some(*f),
                    Value::Integer(i) => Some(*i as f64),
                    _ => None,
                })
                .collect()
        });
        match parsed {
            Some(list) => *out = list,
            None => self.errs.push(format!("{key}: expected an array of numbers")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str("kind = \"multitask\"").unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::Multitask));
    }

    #[test]
    fn echo_reparses_identically() {
        let text = r#"
kind = "federated"
seed = 7
[suite]
n_tasks = 3
noise = 0.5
[fed]
n_clients = 3
ranks = [4, 2, 2]
strategies = ["fed_alora_hetero", "fedsa_hetero"]
weights = [0.5, 0.25, 0.25]
"#;
        let cfg = parse_config_str(text).unwrap();
        let again = parse_config_str(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml(), again.to_toml());
    }

    #[test]
    fn all_problems_are_reported() {
        let text = r#"
kind = "federated"
bogus = 1
[suite]
n_tasks = 4
colour = "red"
[fed]
n_clients = 4
ranks = [4, 4, 2]
[train]
lr = "fast"
"#;
        let Error::Config(errs) = parse_config_str(text).unwrap_err() else { panic!() };
        let joined = errs.join("\n");
        assert!(joined.contains("bogus: unknown key"), "{joined}");
        assert!(joined.contains("suite.colour: unknown key"), "{joined}");
        assert!(joined.contains("train.lr: expected a number"), "{joined}");
    }

    #[test]
    fn mismatched_ranks_name_both_keys() {
        let text = "kind = \"federated\"\n[fed]\nn_clients = 4\nranks = [8, 4, 2]\nstrategies = [\"fed_alora_hetero\"]\n[suite]\nn_tasks = 4\n";
        let msg = parse_config_str(text).unwrap_err().to_string();
        assert!(msg.contains("fed.ranks") && msg.contains("fed.n_clients"), "{msg}");
    }

    #[test]
    fn analysis_requires_paths() {
        let msg = parse_config_str("kind = \"analysis\"").unwrap_err().to_string();
        assert!(msg.contains("analysis.before") && msg.contains("analysis.after"), "{msg}");
    }

    #[test]
    fn missing_kind_is_an_error() {
        assert!(parse_config_str("seed = 1").unwrap_err().to_string().contains("kind"));
    }
}
