use std::path::Path;
use std::process::{Command, Output};

fn hkr(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hkr")).args(args).current_dir(dir).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

const SMALL: &[&str] = &["--n", "80", "--hidden", "16,16", "--epochs", "5", "--batch-size", "16"];

#[test]
fn train_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let mut args = vec!["train", "--seed", "3", "--output-dir", run];
        args.extend_from_slice(SMALL);
        assert!(hkr(&args, dir.path()).status.success());
        models.push(std::fs::read(dir.path().join(run).join("model.json")).unwrap());
        assert!(dir.path().join(run).join("history.json").exists());
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"seed": 5, "optimizer": {"epochs": 2}, "model": {"hidden": [8]}}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let mut args = vec!["train", "--config", "cfg.json", "--output-dir", "out", "--epochs", "9"];
    args.extend_from_slice(&SMALL[..2]);
    assert!(hkr(&args, dir.path()).status.success());
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/config.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], 5);
    assert_eq!(written["optimizer"]["epochs"], 2);
    assert_eq!(written["optimizer"]["batch_size"], 64);
    assert_eq!(written["model"]["hidden"], serde_json::json!([8]));
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 2);
}

#[test]
fn demo_writes_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["demo-two-moons", "--seed", "0", "--output-dir", "demo"];
    args.extend_from_slice(SMALL);
    let out = hkr(&args, dir.path());
    assert!(out.status.success());
    let demo = dir.path().join("demo");
    let grid = std::fs::read_to_string(demo.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("x1,x2,score"));
    assert_eq!(grid.lines().count(), 40_001);
    for f in ["scores.csv", "level_map.svg", "histograms.csv", "model.json", "summary.json", "config.json"] {
        assert!(demo.join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("overlap"));
}

#[test]
fn certify_and_attack_reuse_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seed", "1", "--output-dir", "m"];
    args.extend_from_slice(SMALL);
    assert!(hkr(&args, dir.path()).status.success());
    let mut args = vec!["certify", "--seed", "1", "--model", "m/model.json", "--output-dir", "c", "--limit", "10", "--steps", "10"];
    args.extend_from_slice(&SMALL[..2]);
    assert!(hkr(&args, dir.path()).status.success());
    let cert = std::fs::read_to_string(dir.path().join("c/certification.csv")).unwrap();
    assert_eq!(cert.lines().count(), 11);
    let mut args = vec!["attack", "--seed", "1", "--model", "m/model.json", "--output-dir", "c", "--eps", "0.1,0.5", "--steps", "10"];
    args.extend_from_slice(&SMALL[..2]);
    assert!(hkr(&args, dir.path()).status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("c/attack_sweep.csv")).unwrap().lines().count(), 3);
}

#[test]
fn transport_reports_plans() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["transport", "--seed", "2", "--points", "5", "--output-dir", "t", "--n", "40"];
    assert!(hkr(&args, dir.path()).status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t/transport.json")).unwrap()).unwrap();
    assert!(report["classical_cost"].as_f64().unwrap() > 0.0);
    assert!(report.get("alignment").is_none());
}

#[test]
fn duality_suite_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = hkr(&["duality-suite", "--seeds", "3", "--sizes", "1,2,3", "--output", "d.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 3 * 3 * 4);
    assert_eq!(report["pass"], true);

    let bad = hkr(&["duality-suite", "--seeds", "0"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let bad = hkr(&["train", "--seed", "1", "--epochs", "0", "--output-dir", "x"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    let unseeded = hkr(&["train", "--output-dir", "x"], dir.path());
    assert_eq!(unseeded.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unseeded.stderr).contains("seed"));
}
