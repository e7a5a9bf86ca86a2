//! End-to-end tests that drive the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mimo-detect")
}

fn run_cli(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    cmd.env_remove("MIMO_DETECT_OUT_ROOT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn oracle_config(out_dir: &Path, id: &str, trials: u64) -> String {
    format!(
        r#"{{
  "experiment_id": "{id}",
  "mode": "oracle-check",
  "out_dir": "{}",
  "seed": 7,
  "eval": {{
    "channel": {{"regime": "vc", "distribution": "iid_gaussian", "K": 2, "N": 4, "complex": false}},
    "constellation": "bpsk",
    "snr_grid_db": [0.0, 5.0, 10.0],
    "trials": {trials},
    "detectors": []
  }}
}}"#,
        out_dir.display()
    )
}

#[test]
fn oracle_check_reports_full_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &oracle_config(tmp.path(), "oracle", 50));
    let out = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("sd==ml: 50/50"), "{}", text(&out.stdout));
    let oracle = std::fs::read_to_string(tmp.path().join("oracle").join("oracle.txt")).unwrap();
    assert!(oracle.starts_with("# config_sha256: "), "{oracle}");
    assert!(oracle.contains("sd==ml: 50/50"), "{oracle}");
    assert!(tmp.path().join("oracle").join("config.json").exists());
}

#[test]
fn invalid_constellation_fails_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let body = oracle_config(tmp.path(), "bad", 10).replace("bpsk", "qam64");
    let cfg = write_config(tmp.path(), "cfg.json", &body);
    let out = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("eval.constellation"), "{err}");
    assert!(err.contains("qam64"), "{err}");
}

#[test]
fn existing_experiment_dir_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &oracle_config(tmp.path(), "twice", 5));
    let first = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(first.status.success(), "{}", text(&first.stderr));
    let second = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(!second.status.success());
    assert!(text(&second.stderr).contains("--force"), "{}", text(&second.stderr));
    let forced = run_cli(&["run", cfg.to_str().unwrap(), "--force"], &[]);
    assert!(forced.status.success(), "{}", text(&forced.stderr));
}

#[test]
fn out_root_env_var_overrides_the_configured_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let configured = tmp.path().join("configured");
    let actual = tmp.path().join("actual");
    std::fs::create_dir_all(&configured).unwrap();
    std::fs::create_dir_all(&actual).unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &oracle_config(&configured, "redirected", 5));
    let out = run_cli(
        &["run", cfg.to_str().unwrap()],
        &[("MIMO_DETECT_OUT_ROOT", actual.to_str().unwrap())],
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(actual.join("redirected").join("oracle.txt").exists());
    assert!(!configured.join("redirected").exists());
}

#[test]
fn curve_and_bench_write_csv_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{
  "experiment_id": "curve",
  "mode": "curve",
  "out_dir": "{}",
  "seed": 3,
  "eval": {{
    "channel": {{"regime": "vc", "distribution": "iid_gaussian", "K": 2, "N": 4, "complex": false}},
    "constellation": "bpsk",
    "snr_grid_db": [4.0, 8.0],
    "trials": 200,
    "detectors": [{{"kind": "zf"}}, {{"kind": "sd"}}]
  }}
}}"#,
        tmp.path().display()
    );
    let cfg = write_config(tmp.path(), "curve.json", &body);
    let out = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("curve").join("curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_sha256: "));
    assert_eq!(lines[1], "# seed: 3");
    assert_eq!(
        lines[2],
        "detector,constellation,regime,K,N,snr_db,trials,errors,rate,stderr,skipped,layer"
    );
    assert_eq!(lines.len(), 3 + 4, "two detectors x two SNR points");

    let bench_body = format!(
        r#"{{
  "experiment_id": "bench",
  "mode": "bench",
  "out_dir": "{}",
  "seed": 3,
  "eval": {{
    "channel": {{"regime": "vc", "distribution": "iid_gaussian", "K": 2, "N": 4, "complex": false}},
    "constellation": "bpsk",
    "trials": 1,
    "detectors": [{{"kind": "zf"}}],
    "batch_sizes": [1, 10],
    "repetitions": 3,
    "bench_snr_db": 10.0
  }}
}}"#,
        tmp.path().display()
    );
    let cfg = write_config(tmp.path(), "bench.json", &bench_body);
    let out = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("bench").join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[2], "detector,batch,mean_s,min_s,max_s");
    assert_eq!(lines.len(), 3 + 2, "one detector x two batch sizes");
}

#[test]
fn train_then_describe_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{
  "experiment_id": "tiny-train",
  "mode": "train",
  "out_dir": "{}",
  "train": {{
    "architecture": "detnet",
    "channel": {{"regime": "vc", "distribution": "iid_gaussian", "K": 2, "N": 4, "complex": false}},
    "constellation": "bpsk",
    "snr_min_db": 7.0,
    "snr_max_db": 14.0,
    "batch_size": 10,
    "iterations": 30,
    "seed": 11,
    "layers": 3,
    "z_width": 16,
    "v_width": 8,
    "checkpoint_every": 10,
    "log_every": 10,
    "validation_trials": 20
  }}
}}"#,
        tmp.path().display()
    );
    let cfg = write_config(tmp.path(), "train.json", &body);
    let out = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let ckpt = tmp.path().join("tiny-train").join("model.ckpt");
    assert!(ckpt.exists());
    let train_csv = std::fs::read_to_string(tmp.path().join("tiny-train").join("train.csv")).unwrap();
    assert!(train_csv.lines().nth(2).unwrap().starts_with("iteration,loss,val_ber,seconds"));

    let desc = run_cli(&["describe", ckpt.to_str().unwrap()], &[]);
    assert!(desc.status.success(), "{}", text(&desc.stderr));
    let body = text(&desc.stdout);
    for needle in [
        "architecture: detnet",
        "layers: 3",
        "widths: 16x8",
        "constellation: bpsk",
        "K: 2",
        "N: 4",
        "training_iterations: 30",
    ] {
        assert!(body.contains(needle), "missing {needle:?} in:\n{body}");
    }

    // the trained checkpoint is usable as a curve detector
    let curve_body = format!(
        r#"{{
  "experiment_id": "learned-curve",
  "mode": "curve",
  "out_dir": "{0}",
  "seed": 5,
  "eval": {{
    "channel": {{"regime": "vc", "distribution": "iid_gaussian", "K": 2, "N": 4, "complex": false}},
    "constellation": "bpsk",
    "snr_grid_db": [10.0],
    "trials": 50,
    "detectors": [{{"kind": "checkpoint", "checkpoint": "{1}"}}]
  }}
}}"#,
        tmp.path().display(),
        ckpt.display()
    );
    let cfg = write_config(tmp.path(), "learned.json", &curve_body);
    let out = run_cli(&["run", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("learned-curve").join("curve.csv")).unwrap();
    assert!(csv.contains("model,"), "default label is the file stem:\n{csv}");
}

#[test]
fn describe_rejects_a_truncated_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("broken.ckpt");
    std::fs::write(&path, b"MDET not a real checkpoint").unwrap();
    let out = run_cli(&["describe", path.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("error:"), "{err}");
}

#[test]
fn unknown_action_exits_with_usage_error() {
    let out = run_cli(&["frobnicate", "x"], &[]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}
