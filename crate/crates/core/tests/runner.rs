use std::fs;
use std::path::{Path, PathBuf};

use awkd_core::runner::{emit_summary, parse_config, run_experiment, KINDS};

fn bundled() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut paths: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
}

#[test]
fn bundled_configs_cover_every_kind() {
    let kinds: Vec<&str> = bundled().iter().map(|p| parse_config(p, None).unwrap().kind()).collect();
    for kind in KINDS {
        assert!(kinds.contains(&kind), "no bundled config for {kind}");
    }
}

#[test]
fn bundled_runs() {
    for path in bundled() {
        let config = parse_config(&path, None).unwrap();
        let record = run_experiment(&config).unwrap();
        let failed: Vec<&str> = record.assertions.iter().filter(|a| !a.pass).map(|a| a.name.as_str()).collect();
        if config.kind() == "rate" {
            // the regularized optimum itself sits above the KL target
            assert_eq!(failed, ["terminal mean KL"], "{}", path.display());
        } else {
            assert!(failed.is_empty(), "{}: {failed:?}", path.display());
        }
    }
}

#[test]
fn appendix_record_reports_golden_values() {
    let path = bundled().into_iter().find(|p| p.ends_with("appendix_a.json")).unwrap();
    let record = run_experiment(&parse_config(&path, None).unwrap()).unwrap();
    let q = record.assertions.iter().find(|a| a.name == "q_adaptive[0]").unwrap();
    assert!((q.measured - 0.6764).abs() < 1e-4);
    assert_eq!(q.tol, 0.005);
    let dir = tempfile::tempdir().unwrap();
    let emitted = emit_summary(&record, dir.path()).unwrap();
    assert!(emitted.text.contains("PASS q_adaptive[0]: measured 6.763636e-1, expected 0.676 (tol 0.005)"));
}

#[test]
fn train_tables_repeat_exactly() {
    let path = bundled().into_iter().find(|p| p.ends_with("train_uniform.json")).unwrap();
    let config = parse_config(&path, None).unwrap();
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a.tables, b.tables);
    let other = run_experiment(&parse_config(&path, Some(config.seed() + 1)).unwrap()).unwrap();
    assert_ne!(a.tables, other.tables);
}
