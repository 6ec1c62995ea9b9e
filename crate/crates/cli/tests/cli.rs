use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn simulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn out_arg(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn scenario_one_has_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&[
        "--scenario",
        "scenario1",
        "--seed",
        "7",
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = report(dir.path());
    let run = &r["runs"][0];
    assert_eq!(run["seed"], 7);
    let nets: Vec<i64> = run["per_relayer"]
        .as_object()
        .unwrap()
        .values()
        .map(|p| p["net"].as_i64().unwrap())
        .collect();
    assert_eq!(nets.iter().filter(|n| **n > 0).count(), 1);
    assert_eq!(nets.iter().filter(|n| **n < 0).count(), 2);
    assert_eq!(run["duplicate_reverts"], 6);
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("variant,seed,relayers,metric,key,value\n"));
    assert!(csv.contains("main,7,3,duplicate_reverts,,6\n"));
    assert!(!dir.path().join("trace.ndjson").exists());
}

#[test]
fn same_arguments_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = simulate(&[
            "--scenario",
            "accountability",
            "--trace",
            "--check",
            "--out",
            out_arg(dir.path()),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["report.json", "report.csv", "trace.ndjson"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn trace_round_trips_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&[
        "--scenario",
        "scenario3",
        "--trace",
        "--format",
        "json",
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!dir.path().join("report.csv").exists());
    let text = fs::read_to_string(dir.path().join("trace.ndjson")).unwrap();
    let trace = xcrelay::trace::RunTrace::from_ndjson(&text).unwrap();
    let again = serde_json::to_value(xcrelay::metrics::compute(&trace).unwrap()).unwrap();
    assert_eq!(report(dir.path())["runs"][0], again);
}

#[test]
fn scalability_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&[
        "--scenario",
        "scalability",
        "--relayers",
        "1,2,4,8",
        "--check",
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let r = report(dir.path());
    let counts: Vec<i64> = r["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["relayers"].as_i64().unwrap())
        .collect();
    assert_eq!(counts, [1, 2, 4, 8]);
    assert_eq!(r["baseline"].as_array().unwrap().len(), 4);
    let verdict = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["check"] == "scalability")
        .unwrap();
    assert_eq!(verdict["passed"], true);
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // Coordinated allocation removes the race the check looks for.
    let out = simulate(&[
        "--scenario",
        "scenario1",
        "--allocation",
        "approach1",
        "--check",
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL scenario1"));
    assert!(dir.path().join("report.json").exists());

    let out = simulate(&[
        "--scenario",
        "scalability",
        "--relayers",
        "2",
        "--check",
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_sweep_is_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&[
        "--scenario",
        "scenario2",
        "--seeds",
        "3..5",
        "--trace",
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let seeds: Vec<i64> = report(dir.path())["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["seed"].as_i64().unwrap())
        .collect();
    assert_eq!(seeds, [3, 4, 5]);
    for s in 3..=5 {
        assert!(dir.path().join(format!("trace-seed{s}.ndjson")).exists());
    }
}

#[test]
fn config_file_layers_over_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("more.toml");
    fs::write(&cfg, "[workload]\nfee = 50\n").unwrap();
    let out = simulate(&[
        "--scenario",
        "scenario1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let run = &report(dir.path())["runs"][0];
    assert_eq!(run["fees_released"], 150);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(&["--config", "missing.toml", "--out", out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "network_delay = 0.0\n").unwrap();
    let out = simulate(&[
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("network_delay"));

    let out = simulate(&["--scenario", "scenario1", "--seeds", "5..1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = simulate(&["--scenario", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    let out = simulate(&["--out", out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("report.json").exists());
}
