use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sfw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfw")).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, variant: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let body = format!(
        r#"{{
  "problem": {{ "kind": "box", "dim": 2 }},
  "noise": {{ "kind": "gaussian", "sigma": 0.01 }},
  "omega0": 0.01,
  "delta": 0.1,
  "horizon": 5,
  "variant": "{variant}",
  "cn": 96,
  "repetitions": 2{extra}
}}"#
    );
    std::fs::write(&path, body).unwrap();
    path
}

fn repo_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_configs_validate() {
    for name in ["adaptive_d2.json", "adaptive_d4.json", "adaptive_d10.json", "compare_sigma01.json"] {
        let out = sfw(&["validate-config", "--config", &repo_config(name)]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = config(dir.path(), "unknown.json", "adaptive", r#", "colour": "red""#);
    assert_eq!(sfw(&["validate-config", "--config", unknown.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(sfw(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
    let bad_omega = config(dir.path(), "omega.json", "adaptive", "");
    let text = std::fs::read_to_string(&bad_omega).unwrap().replace("0.01,\n  \"delta\"", "-1.0,\n  \"delta\"");
    std::fs::write(&bad_omega, text).unwrap();
    assert_eq!(sfw(&["validate-config", "--config", bad_omega.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", "adaptive", "");
    let out_dir = dir.path().join("out");
    let out = sfw(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "7",
        "--reps",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in 7..10 {
        let csv = std::fs::read_to_string(out_dir.join(format!("run_{seed}.csv"))).unwrap();
        assert!(csv.starts_with("t,f_gap,normalized_gap,"));
        assert_eq!(csv.lines().count(), 7);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"], serde_json::json!([7, 8, 9]));
}

#[test]
fn compare_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.json", "adaptive", "");
    let out_dir = dir.path().join("cmp");
    let out = sfw(&["compare", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 2);
}

#[test]
fn failing_runs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "ro.json", "ro", r#", "ro_budget": 3"#);
    let out = sfw(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stdout));
}
