//! End-to-end runs of the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU32, Ordering};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nomaclass")
}

static DIR_SEQ: AtomicU32 = AtomicU32::new(0);

/// A fresh directory under the target-specific temp root, removed on drop.
struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> TempDir {
        let seq = DIR_SEQ.fetch_add(1, Ordering::Relaxed);
        let path = std::env::temp_dir().join(format!(
            "nomaclass-cli-{tag}-{}-{seq}",
            std::process::id()
        ));
        std::fs::create_dir_all(&path).expect("temp dir");
        TempDir(path)
    }

    fn path(&self) -> &Path {
        &self.0
    }

    fn join(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("sweep"), "help lists subcommands: {text}");
}

#[test]
fn bad_flag_value_exits_one() {
    let out = run(&["sweep", "--trials", "abc"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = TempDir::new("badkey");
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"trails": 10}"#).unwrap();
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
}

#[test]
fn bad_power_split_exits_one() {
    let dir = TempDir::new("badpower");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"modes": [
            {"id": 0, "far_order": 4, "power_far": 1.0},
            {"id": 1, "far_order": 4, "near_order": 4, "power_far": 0.8, "power_near": 0.21}
        ]}"#,
    )
    .unwrap();
    let out = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("P_f + P_n"));
}

#[test]
fn sweep_writes_all_artifacts_and_reruns_bit_exactly() {
    let first = TempDir::new("sweep-a");
    let second = TempDir::new("sweep-b");
    let args = |out: &TempDir| {
        vec![
            "sweep".to_string(),
            "--preset".into(),
            "case1".into(),
            "--snr-min".into(),
            "5".into(),
            "--snr-max".into(),
            "15".into(),
            "--snr-step".into(),
            "5".into(),
            "--trials".into(),
            "250".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            out.path().to_str().unwrap().into(),
        ]
    };
    for dir in [&first, &second] {
        let out = Command::new(bin()).args(args(dir)).output().expect("binary runs");
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["curves.csv", "capacity.csv", "confusion_5.csv", "confusion_10.csv", "confusion_15.csv", "manifest.json"] {
        let a = read(&first.join(name));
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, read(&second.join(name)), "{name} differs between identical runs");
    }
    let curves = String::from_utf8(read(&first.join("curves.csv"))).unwrap();
    let mut lines = curves.lines();
    assert!(lines.next().unwrap().starts_with("snr_db,scheme,trials"), "header row present");
    // 3 SNR points x 4 schemes.
    assert_eq!(lines.count(), 12);
}

#[test]
fn case3_manifest_records_the_far_power_ratios() {
    let dir = TempDir::new("case3");
    let out = run(&[
        "sweep",
        "--preset",
        "case3",
        "--snr-min",
        "10",
        "--snr-max",
        "10",
        "--trials",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&dir.join("manifest.json"))).unwrap();
    let modes = manifest["config"]["modes"].as_array().unwrap();
    let ratios: Vec<f64> = modes.iter().map(|m| m["power_far"].as_f64().unwrap()).collect();
    assert_eq!(ratios, vec![1.0, 0.7619, 0.8653, 0.9275, 0.95, 0.97]);
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
    assert_eq!(manifest["seed"].as_u64(), Some(1));
}

#[test]
fn validate_passes() {
    let out = run(&["validate", "--trials", "100"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ok deterministic reruns"), "got: {text}");
    assert!(!text.contains("FAIL"), "got: {text}");
}

#[test]
fn theta_search_runs_under_both_spellings() {
    let dir = TempDir::new("theta");
    let out = run(&[
        "--optimize-theta",
        "--snr",
        "13",
        "--grid-step",
        "0.5",
        "--trials",
        "150",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("theta"), "prints the estimate: {text}");
    assert!(text.contains("capacity"), "prints the objective: {text}");
    let search = String::from_utf8(read(&dir.join("theta_search.csv"))).unwrap();
    assert!(search.starts_with("theta,capacity\n"));
    // pi/2 over 0.5 rad.
    assert_eq!(search.lines().count(), 1 + 4);

    let sub = run(&[
        "optimize-theta",
        "--snr",
        "13",
        "--grid-step",
        "0.5",
        "--trials",
        "150",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(sub.status.code(), Some(0));
    assert_eq!(out.stdout, sub.stdout, "flag and subcommand spellings agree");
}

#[test]
fn analyze_writes_closed_form_tables() {
    let dir = TempDir::new("analyze");
    let out = run(&[
        "analyze",
        "--preset",
        "case2",
        "--snr-min",
        "0",
        "--snr-max",
        "20",
        "--snr-step",
        "10",
        "--mc-samples",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let analysis = String::from_utf8(read(&dir.join("analysis.csv"))).unwrap();
    // 3 SNR points x 2x2 NOMA pairs.
    assert_eq!(analysis.lines().count(), 1 + 12);
    let bound = String::from_utf8(read(&dir.join("capacity_bound.csv"))).unwrap();
    let last = bound.lines().last().unwrap();
    let cap: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(cap > 0.0, "positive capacity at 20 dB: {last}");
}
