use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn carla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carla")).args(args).output().unwrap()
}

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/lecture_hall.json")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The bundled scenario with one edit applied, written to `dir`.
fn edited(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(scenario()).unwrap()).unwrap();
    edit(&mut doc);
    let path = dir.join("edited.json");
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn validate_accepts_the_bundled_scenario() {
    let out = carla(&["validate", arg(&scenario())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn validate_names_the_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = edited(dir.path(), |d| d["nodes"][1]["radio_range"] = (-1.0).into());
    let out = carla(&["validate", arg(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodes[1].radio_range"));
}

#[test]
fn missing_inputs_are_runtime_failures() {
    assert_eq!(carla(&["validate", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(carla(&["report", "/nonexistent.tsv"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("never");
    let out = carla(&["run", "--scenario", "/nonexistent.json", "--seed", "1", "--out", arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn run_refuses_invalid_scenarios_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = edited(dir.path(), |d| d["quiz"]["deadline"] = 5.into());
    let out_dir = dir.path().join("out");
    let out = carla(&["run", "--scenario", arg(&bad), "--seed", "1", "--out", arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn seed_is_required() {
    assert_eq!(carla(&["run", "--scenario", arg(&scenario())]).status.code(), Some(1));
}

#[test]
fn report_reproduces_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for format in ["csv", "json"] {
        let out_dir = dir.path().join(format);
        let out = carla(&["run", "--scenario", arg(&scenario()), "--seed", "3", "--out", arg(&out_dir), "--format", format]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let metrics = fs::read_to_string(out_dir.join(format!("metrics.{format}"))).unwrap();
        let trace = out_dir.join("trace.tsv");
        let report = carla(&["report", arg(&trace), "--format", format]);
        assert_eq!(report.status.code(), Some(0));
        assert_eq!(String::from_utf8(report.stdout).unwrap(), metrics);
        assert!(out_dir.join("ranking.csv").exists());
    }
}

#[test]
fn csv_metrics_have_a_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = carla(&["run", "--scenario", arg(&scenario()), "--seed", "1", "--ticks", "40", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("metric,tick_or_scope,value"));
}

#[test]
fn seed_sweep_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = carla(&["run", "--scenario", arg(&scenario()), "--seeds", "1..3", "--ticks", "30", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let traces: Vec<String> = (1..=3)
        .map(|s| fs::read_to_string(dir.path().join(format!("seed-{s}/trace.tsv"))).unwrap())
        .collect();
    assert_ne!(traces[0], traces[1]);
    // a sweep member matches the same seed run on its own
    let single = dir.path().join("single");
    carla(&["run", "--scenario", arg(&scenario()), "--seed", "2", "--ticks", "30", "--out", arg(&single)]);
    assert_eq!(fs::read_to_string(single.join("trace.tsv")).unwrap(), traces[1]);
}

#[test]
fn corrupt_trace_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    carla(&["run", "--scenario", arg(&scenario()), "--seed", "1", "--ticks", "20", "--out", arg(dir.path())]);
    let text = fs::read_to_string(dir.path().join("trace.tsv")).unwrap();
    let cut = dir.path().join("cut.tsv");
    fs::write(&cut, &text[..text.len() / 2 + 7]).unwrap();
    let out = carla(&["report", arg(&cut)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = carla(&["run", "--scenario", arg(&scenario()), "--seed", "1", "--ticks", "5", "--out", arg(&blocker)]);
    assert_eq!(out.status.code(), Some(2));
}
