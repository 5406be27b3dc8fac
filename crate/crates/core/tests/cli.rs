//! Black-box tests of the `hqnsim` binary: exit codes, output files,
//! manifests, and error reporting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hqnsim")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hqnsim-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], paths: &[&Path]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for p in paths {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Small-but-real settings so the whole suite stays fast.
const SMALL_GEN: &str = r#"{"gen": {"k": 3, "n": 300, "warp": 0.5}}"#;

#[test]
fn unknown_config_key_exits_2_and_names_the_path() {
    let dir = tmp_dir("badkey");
    let cfg = write_config(&dir, r#"{"scenario": {"lamda": 3.0}}"#);
    let out = run(&["gen", "--config"], &[&cfg]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("scenario.lamda"),
        "stderr should name the bad key path, got: {stderr}"
    );
}

#[test]
fn config_error_still_writes_a_manifest() {
    let dir = tmp_dir("badkey-manifest");
    let cfg = write_config(&dir, r#"{"scenario": {"lamda": 3.0}}"#);
    let out_dir = dir.join("out");
    let out = run(
        &["gen", "--config"],
        &[&cfg, Path::new("--out"), &out_dir],
    );
    assert_eq!(out.status.code(), Some(2));
    let manifest = read(&out_dir.join("manifest.json"));
    assert!(manifest.contains("\"status\": \"error\""));
    assert!(manifest.contains("scenario.lamda"));
}

#[test]
fn gen_writes_dataset_and_is_reproducible() {
    let dir = tmp_dir("gen");
    let cfg = write_config(&dir, SMALL_GEN);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(
            &["gen", "--seed", "11", "--no-timestamp", "--config"],
            &[&cfg, Path::new("--out"), out_dir],
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv = read(&out_a.join("dataset.csv"));
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("d0,d1,d2,label"));
    assert_eq!(lines.count(), 300);
    assert_eq!(csv, read(&out_b.join("dataset.csv")));
    assert_eq!(read(&out_a.join("dataset.svg")), read(&out_b.join("dataset.svg")));
    // The manifest records a digest for every output file.
    let manifest = read(&out_a.join("manifest.json"));
    assert!(manifest.contains("dataset.csv"));
    assert!(manifest.contains("\"status\": \"ok\""));
}

#[test]
fn fit_both_methods_use_separate_subdirectories() {
    let dir = tmp_dir("fit");
    let cfg = write_config(
        &dir,
        r#"{
            "gen": {"k": 3, "n": 300, "warp": 0.5},
            "fit": {
                "r": 3,
                "dagmm": {"encoder_sizes": [3, 8, 2], "outer_iters": 10, "pretrain_epochs": 20}
            }
        }"#,
    );
    let out_dir = dir.join("out");
    let gen = run(
        &["gen", "--seed", "3", "--config"],
        &[&cfg, Path::new("--out"), &out_dir],
    );
    assert_eq!(gen.status.code(), Some(0));
    let data = out_dir.join("dataset.csv");
    for method in ["gmm", "dagmm"] {
        let out = run(
            &["fit", "--method", method, "--seed", "3", "--config"],
            &[&cfg, Path::new("--data"), &data, Path::new("--out"), &out_dir],
        );
        assert_eq!(
            out.status.code(),
            Some(0),
            "{method}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out_dir.join(method).join("model.json").exists());
        assert!(out_dir.join(method).join("manifest.json").exists());
    }
    // GMM labels lie in [0, r).
    let labels = read(&out_dir.join("gmm/labels.csv"));
    let mut lines = labels.lines();
    assert_eq!(lines.next(), Some("label"));
    for line in lines {
        let l: usize = line.parse().unwrap();
        assert!(l < 3, "label {l} out of range");
    }
    // The DAGMM trace has the alternating-optimization columns and one row
    // per outer iteration (plus the initial point).
    let trace = read(&out_dir.join("dagmm/trace.csv"));
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,aug_lagrangian,recon,nll,violation"));
    assert!(lines.count() >= 2);
    assert!(out_dir.join("dagmm/scatter_epoch1.svg").exists());
    assert!(out_dir.join("dagmm/scatter_final.svg").exists());
}

#[test]
fn sweep_baseline_writes_curve_of_expected_shape() {
    let dir = tmp_dir("sweep");
    let cfg = write_config(
        &dir,
        r#"{"sweep": {"methods": ["baseline"], "mc_samples": 20000}}"#,
    );
    let out_dir = dir.join("out");
    let out = run(
        &["sweep", "--seed", "5", "--config"],
        &[&cfg, Path::new("--out"), &out_dir],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&out_dir.join("curve.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("snr_db,rate_baseline,stderr_baseline"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5, "default grid has five points");
    for row in rows {
        assert_eq!(row.split(',').count(), 3);
    }
    assert!(out_dir.join("curve.svg").exists());
}

#[test]
fn sweep_jobs_flag_does_not_change_the_output() {
    let dir = tmp_dir("sweep-jobs");
    let cfg = write_config(
        &dir,
        r#"{"sweep": {"methods": ["baseline"], "mc_samples": 20000}}"#,
    );
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out_dir, jobs) in [(&out_a, "1"), (&out_b, "4")] {
        let out = run(
            &["sweep", "--seed", "5", "--no-timestamp", "--jobs", jobs, "--config"],
            &[&cfg, Path::new("--out"), out_dir],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(read(&out_a.join("curve.csv")), read(&out_b.join("curve.csv")));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tmp_dir("gradcheck");
    let ok = run(&["gradcheck", "--out"], &[&dir]);
    assert_eq!(ok.status.code(), Some(0));
    // Corrupting the analytic gradients must trip the self-check.
    let flipped = Command::new(bin())
        .args(["gradcheck", "--out"])
        .arg(&dir)
        .env("HQNSIM_GRADCHECK_FLIP", "1")
        .output()
        .unwrap();
    assert_eq!(flipped.status.code(), Some(4));
}

#[test]
fn report_lists_manifests_and_fails_on_empty_directory() {
    let dir = tmp_dir("report");
    let cfg = write_config(&dir, SMALL_GEN);
    let out_dir = dir.join("out");
    let gen = run(
        &["gen", "--seed", "1", "--config"],
        &[&cfg, Path::new("--out"), &out_dir],
    );
    assert_eq!(gen.status.code(), Some(0));
    let report = run(&["report", "--out"], &[&out_dir]);
    assert_eq!(report.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&report.stdout);
    assert!(stdout.contains("command=gen"));
    assert!(stdout.contains("status=ok"));

    let empty = dir.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let none = run(&["report", "--out"], &[&empty]);
    assert_eq!(none.status.code(), Some(2));
}
