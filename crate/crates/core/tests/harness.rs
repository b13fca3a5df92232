//! End-to-end runs of every experiment kind through the public runner.

use std::path::{Path, PathBuf};

use alora_core::harness::{
    load_checkpoint, parse_config, parse_config_str, read_results, run_experiment, ExperimentConfig, ExperimentKind,
    CHECKPOINT_DIR, ECHO_FILE, LEDGER_FILE, MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(text: &str) -> (alora_core::harness::RunReport, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(&format!("output_dir = \"{}\"\n{text}", dir.path().join("out").display())).unwrap();
    (run_experiment(&cfg).unwrap(), dir)
}

fn manifest(dir: &Path) -> String {
    std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()
}

#[test]
fn multitask_writes_every_artifact() {
    let (report, _tmp) = run(
        "kind = \"multitask\"\n[suite]\nd_in = 8\nd_out = 8\nsamples_per_task = 40\n[train]\nepochs = 2\n\
         [adapter]\nschemes = [\"vanilla\", \"alora\"]\n",
    );
    for f in [ECHO_FILE, METRICS_FILE, SUMMARY_FILE, "gates.csv"] {
        assert!(report.dir.join(f).is_file(), "{f} missing");
    }
    let ck = load_checkpoint(&report.dir.join(CHECKPOINT_DIR).join("alora_step2.ckpt")).unwrap();
    assert_eq!(ck.step, 2);
    assert!(manifest(&report.dir).starts_with("status: complete"));

    let metrics = read_results(&report.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.iter().filter(|m| m.phase == "baseline").count(), 3);
    let dm = report.summary["schemes"]["alora"]["delta_m_percent"].as_f64().unwrap();
    assert!(dm.is_finite());
    assert!(report.summary["schemes"]["vanilla"]["gate_warning"].is_null());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.dir.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn federated_writes_ledger_and_cross_matrix() {
    let (report, _tmp) = run(
        "kind = \"federated\"\n[suite]\nn_tasks = 3\nd_in = 8\nd_out = 8\nsamples_per_task = 40\n\
         [train]\nepochs = 1\n[fed]\nn_clients = 3\nrounds = 2\nranks = [3, 2, 2]\n\
         strategies = [\"flora\", \"fed_alora_hetero\"]\n",
    );
    let ledger = std::fs::read_to_string(report.dir.join(LEDGER_FILE)).unwrap();
    assert!(ledger.starts_with("strategy,round,client,upload,download\n"));
    // Two strategies, two rounds, three clients.
    assert_eq!(ledger.lines().count(), 1 + 2 * 2 * 3);
    let cross = &report.summary["strategies"]["fed_alora_hetero"]["cross_test_mse"];
    assert_eq!(cross.as_array().unwrap().len(), 3);
    assert!(report.dir.join(CHECKPOINT_DIR).join("flora_round2.ckpt").is_file());
}

#[test]
fn analysis_compares_two_checkpoints() {
    let (mt, _tmp) = run(
        "kind = \"multitask\"\n[suite]\nd_in = 8\nd_out = 8\nsamples_per_task = 40\n[train]\nepochs = 3\n\
         [adapter]\nschemes = [\"alora\"]\n",
    );
    let ck = mt.dir.join(CHECKPOINT_DIR);
    let (report, _tmp2) = run(&format!(
        "kind = \"analysis\"\n[analysis]\nbefore = \"{}\"\nafter = \"{}\"\n",
        ck.join("alora_step2.ckpt").display(),
        ck.join("alora_final.ckpt").display()
    ));
    let matrices = report.summary["matrices"].as_object().unwrap();
    for name in ["A0", "A1", "A2", "B", "W_g"] {
        let sim = matrices[name]["similarity"].as_f64().unwrap();
        assert!((0.0..=1.0 + 1e-12).contains(&sim), "{name}: {sim}");
    }
    assert!(!matrices.keys().any(|k| k.starts_with("adam.")));
}

#[test]
fn commcost_reports_both_settings() {
    let (report, _tmp) = run("kind = \"commcost\"\n");
    let s = &report.summary["settings"];
    assert_eq!(s["homogeneous"]["strategies"]["fedit"]["total_millions_2dp"], "8.39M");
    assert_eq!(s["heterogeneous"]["strategies"]["flora"]["total_millions_2dp"], "141.56M");
}

#[test]
fn failed_run_leaves_incomplete_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = parse_config_str(&format!(
        "kind = \"analysis\"\noutput_dir = \"{}\"\n[analysis]\nbefore = \"/nonexistent/a.ckpt\"\nafter = \"/nonexistent/b.ckpt\"\n",
        out.display()
    ))
    .unwrap();
    assert!(run_experiment(&cfg).is_err());
    let m = manifest(&out);
    assert!(m.starts_with("status: incomplete"), "{m}");
    assert!(m.contains("error: "), "{m}");
    assert!(m.contains("artifact: config.resolved.toml"), "{m}");
}

#[test]
fn input_config_is_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    let text = format!(
        "kind = \"commcost\"\noutput_dir = \"{}\"\n[commcost]\nmodules = 2\n",
        dir.path().join("out").display()
    );
    std::fs::write(&path, &text).unwrap();
    run_experiment(&parse_config(&path).unwrap()).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn shipped_configs_parse() {
    let annotated = parse_config(&configs_dir().join("annotated.toml")).unwrap();
    assert_eq!(annotated, ExperimentConfig::defaults(ExperimentKind::Multitask));
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let cfg = parse_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            assert!(cfg.problems().is_empty(), "{}", p.display());
        }
    }
}

#[test]
fn default_configs_of_every_kind_are_valid() {
    for kind in [ExperimentKind::Multitask, ExperimentKind::Federated, ExperimentKind::Commcost] {
        assert!(ExperimentConfig::defaults(kind).problems().is_empty(), "{}", kind.name());
    }
}
