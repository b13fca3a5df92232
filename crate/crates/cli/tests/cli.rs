use std::process::{Command, Output};

fn alora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alora")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn selftest_passes() {
    let o = alora(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn commcost_prints_the_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cc");
    let o = alora(&["commcost", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("8.39M") && s.contains("141.56M") && s.contains("12.09M"), "{s}");
    assert!(out.join("MANIFEST").is_file());
}

#[test]
fn overrides_reach_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("mt.toml");
    std::fs::write(&cfg, "kind = \"multitask\"\n[suite]\nd_in = 6\nd_out = 6\nsamples_per_task = 20\n").unwrap();
    let out = dir.path().join("run");
    let o = alora(&[
        "multitask",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "11",
        "--epochs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let echo = std::fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(echo.contains("seed = 11"), "{echo}");
    assert!(echo.contains("epochs = 2"), "{echo}");
}

#[test]
fn bad_config_lists_every_problem_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"federated\"\n[fed]\nranks = [1, 2, 3]\ncolour = 1\n").unwrap();
    let o = alora(&["fed", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fed.colour"), "{err}");
    assert!(err.contains("fed.ranks"), "{err}");
}

#[test]
fn kind_must_match_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "kind = \"commcost\"\n").unwrap();
    let o = alora(&["multitask", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("kind"));
}
