use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tallyband");

fn tallyband(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const CONFIG: &str = r#"{
    "schema": "tallyband.experiment/v1",
    "instances": [{"id": "alt", "family": "alternating"}],
    "algorithms": [{"name": "se_tb", "delta": 0.1}, {"name": "best_constant"}],
    "horizons": [64],
    "seeds": {"master": 3, "count": 2}
}"#;

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let o = tallyband(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(out.join("runs/alt__best_constant__T64__s1.csv").exists());
    assert!(out.join("instances.json").exists());
}

#[test]
fn sweep_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = tallyband(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
        "--horizons",
        "64,100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rows = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(rows.lines().count(), 9);
    assert!(rows.contains(",100,"));

    // Overriding with the config's own master seed changes nothing.
    let o = tallyband(&[
        "--seed",
        "3",
        "sweep",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--horizons",
        "64,100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("summary.csv")).unwrap(),
        std::fs::read(b.join("summary.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &CONFIG.replace("\"horizons\"", "\"unknown\": 1, \"horizons\""),
    );
    let o = tallyband(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown"));

    let o = tallyband(&[
        "run",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
        "--out",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn capacity_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &CONFIG.replace("\"horizons\"", "\"caps\": {\"policy_cap\": 10}, \"horizons\""),
    );
    let out = dir.path().join("o");
    let o = tallyband(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let failures = std::fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.contains("capacity exceeded"));
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = tallyband(&["verify", "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn plot_from_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    tallyband(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--horizons",
        "64,144,256",
    ]);
    let summary = out.join("summary.csv");
    let svg = dir.path().join("p.svg");
    let o = tallyband(&[
        "plot",
        "--summary",
        summary.to_str().unwrap(),
        "--select",
        "algorithm=se_tb|best_constant",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.contains("slope"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("best_constant: 3 horizons, log-log slope 1.0"));

    let o = tallyband(&[
        "plot",
        "--summary",
        summary.to_str().unwrap(),
        "--select",
        "family=gap",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no data"));
}
