use std::path::PathBuf;
use std::process::ExitCode;

use alora_core::harness::{parse_config, run_experiment, ExperimentConfig, ExperimentKind, RunReport};
use alora_core::selftest;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alora", version, about = "Multi-LoRA and federated adapter experiments on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured scheme on the task union and compare to single-task baselines.
    Multitask(RunArgs),
    /// Run federated rounds for every configured strategy.
    Fed(RunArgs),
    /// Compare two checkpoints: subspace similarity and magnitude/direction drift.
    Analyze(AnalyzeArgs),
    /// Print communication costs for the homogeneous and heterogeneous settings.
    Commcost(RunArgs),
    /// Run the built-in consistency checks.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config. Without one, the defaults for the subcommand are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Federated rounds (overrides `fed.rounds`).
    #[arg(long)]
    rounds: Option<usize>,
    /// Training epochs, or local epochs per round (overrides `train.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, required_unless_present = "config")]
    before: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    after: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(kind: ExperimentKind, path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => parse_config(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind != kind {
        bail!(
            "config declares kind = \"{}\" but this subcommand runs \"{}\"",
            cfg.kind.name(),
            kind.name()
        );
    }
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    if let Some(r) = args.rounds {
        cfg.fed.rounds = r;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
}

fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let report = run_experiment(cfg).with_context(|| format!("{} run failed", cfg.kind.name()))?;
    Ok(report)
}

fn print_report(report: &RunReport) {
    println!("wrote {}", report.dir.display());
    for a in &report.artifacts {
        println!("  {a}");
    }
}

fn print_multitask(report: &RunReport) {
    let s = &report.summary;
    if let Some(b) = s["baseline_test_mse"].as_array() {
        let vals: Vec<String> = b.iter().filter_map(|v| v.as_f64()).map(|v| format!("{v:.4e}")).collect();
        println!("single-task baselines (test MSE): {}", vals.join(", "));
    }
    if let Some(schemes) = s["schemes"].as_object() {
        println!("{:<12} {:>14} {:>12} {:>10}", "scheme", "mean test MSE", "delta_m %", "params");
        for (name, v) in schemes {
            println!(
                "{:<12} {:>14.4e} {:>12.3} {:>10}",
                name,
                v["mean_test_mse"].as_f64().unwrap_or(f64::NAN),
                v["delta_m_percent"].as_f64().unwrap_or(f64::NAN),
                v["trainable_params"].as_u64().unwrap_or(0)
            );
        }
    }
}

fn print_fed(report: &RunReport) {
    if let Some(strategies) = report.summary["strategies"].as_object() {
        println!(
            "{:<18} {:>14} {:>14} {:>14} {:>14}",
            "strategy", "own MSE", "cross MSE", "upload", "download"
        );
        for (name, v) in strategies {
            println!(
                "{:<18} {:>14.4e} {:>14.4e} {:>14} {:>14}",
                name,
                v["mean_own_test_mse"].as_f64().unwrap_or(f64::NAN),
                v["mean_cross_test_mse"].as_f64().unwrap_or(f64::NAN),
                v["total_upload"].as_u64().unwrap_or(0),
                v["total_download"].as_u64().unwrap_or(0)
            );
        }
    }
}

fn print_commcost(report: &RunReport) {
    if let Some(settings) = report.summary["settings"].as_object() {
        for (label, v) in settings {
            println!("{label} ranks {}", v["ranks"]);
            if let Some(rows) = v["strategies"].as_object() {
                for (name, row) in rows {
                    println!("  {:<18} {}", name, row["total_millions_2dp"].as_str().unwrap_or("?"));
                }
            }
        }
    }
}

fn print_analysis(report: &RunReport) {
    if let Some(m) = report.summary["matrices"].as_object() {
        println!("{:<28} {:>10} {:>12} {:>12}", "matrix", "sim", "delta_M", "delta_D");
        for (name, v) in m {
            let fmt = |k: &str| v[k].as_f64().map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
            println!("{:<28} {:>10} {:>12} {:>12}", name, fmt("similarity"), fmt("delta_m"), fmt("delta_d"));
        }
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Multitask(args) => {
            let mut cfg = load(ExperimentKind::Multitask, args.config.as_ref())?;
            apply(&mut cfg, &args);
            let report = run(&cfg)?;
            print_multitask(&report);
            print_report(&report);
        }
        Command::Fed(args) => {
            let mut cfg = load(ExperimentKind::Federated, args.config.as_ref())?;
            apply(&mut cfg, &args);
            let report = run(&cfg)?;
            print_fed(&report);
            print_report(&report);
        }
        Command::Commcost(args) => {
            let mut cfg = load(ExperimentKind::Commcost, args.config.as_ref())?;
            apply(&mut cfg, &args);
            let report = run(&cfg)?;
            print_commcost(&report);
            print_report(&report);
        }
        Command::Analyze(args) => {
            let mut cfg = load(ExperimentKind::Analysis, args.config.as_ref())?;
            if let Some(b) = &args.before {
                cfg.analysis.before = b.to_string_lossy().into_owned();
            }
            if let Some(a) = &args.after {
                cfg.analysis.after = a.to_string_lossy().into_owned();
            }
            if let Some(o) = &args.out {
                cfg.output_dir = o.to_string_lossy().into_owned();
            }
            let report = run(&cfg)?;
            print_analysis(&report);
            print_report(&report);
        }
        Command::Selftest => {
            let checks = selftest::run_all();
            let mut failed = 0;
            for c in &checks {
                println!("{} {:<18} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", checks.len());
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
