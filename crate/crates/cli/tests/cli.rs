use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn awkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_awkd")).args(args).env_remove("AWKD_OUT").output().expect("binary runs")
}

fn run_into(config: &str, out: &Path) -> Output {
    let path = configs().join(config);
    awkd(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
}

#[test]
fn list_kinds_names_all_nine() {
    let out = awkd(&["list-kinds"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.lines().any(|l| l == "appendix_a"));
}

#[test]
fn every_kind_has_a_bundled_config() {
    let mut kinds = Vec::new();
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = awkd(&["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        let kind = text.split(" (").nth(1).unwrap().split(',').next().unwrap().to_string();
        kinds.push(kind);
    }
    let listed = String::from_utf8(awkd(&["list-kinds"]).stdout).unwrap();
    for kind in listed.lines() {
        assert!(kinds.iter().any(|k| k == kind), "no config for {kind}");
    }
}

#[test]
fn appendix_run_passes_and_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into("appendix_a.json", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"config_hash\"") && summary.contains("\"q_adaptive[0]\""));
    assert!(dir.path().join("appendix_a.csv").exists());
}

#[test]
fn csv_bodies_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        assert!(run_into("fixed_point.json", dir.path()).status.success());
    }
    for name in ["dynamics.csv", "fixed_point_trace.csv", "summary.json"] {
        let left = fs::read(a.path().join(name)).unwrap();
        let right = fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between runs");
    }
}

#[test]
fn seed_flag_changes_the_hash() {
    let path = configs().join("variance.json");
    let plain = String::from_utf8(awkd(&["validate", path.to_str().unwrap()]).stdout).unwrap();
    let seeded = String::from_utf8(awkd(&["validate", path.to_str().unwrap(), "--seed", "99"]).stdout).unwrap();
    assert_ne!(plain, seeded);
}

#[test]
fn out_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = configs().join("appendix_a.json");
    let out = Command::new(env!("CARGO_BIN_EXE_awkd"))
        .args(["run", path.to_str().unwrap(), "--quiet"])
        .env("AWKD_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("appendix_a.json"))
        .unwrap()
        .replace("\"w_min\": 0.1", "\"w_min\": 0.6")
        .replace("\"teacher\": 2", "\"teacher\": 9");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, text).unwrap();
    let out = awkd(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("2 config issue(s)"), "{err}");
    assert!(err.contains("teacher id 9"));
    assert_eq!(awkd(&["run", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn assertion_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("appendix_a.json"))
        .unwrap()
        .replace("{\"kind\": \"appendix_a\"}", "{\"kind\": \"appendix_a\", \"min_gain\": 0.5}");
    let config = dir.path().join("strict.json");
    fs::write(&config, text).unwrap();
    let out = run_into(config.to_str().unwrap(), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("FAIL"));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = run_into("appendix_a.json", &blocker.join("sub"));
    assert_eq!(out.status.code(), Some(3));
}
