//! Black-box tests driving the compiled `semcom` binary: command wiring,
//! config strictness, manifest emission, determinism, failure cleanup,
//! and the full synth -> train -> eval pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_semcom")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary should run")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is utf-8")
}

/// Run a command expected to fail; the diagnostic must be a single line.
fn fail(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "command {:?} unexpectedly succeeded", args);
    let stderr = String::from_utf8(out.stderr).expect("stderr is utf-8");
    assert_eq!(
        stderr.trim_end().lines().count(),
        1,
        "diagnostic should be one line, got:\n{}",
        stderr
    );
    stderr
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("semcom-cli-{}-{}", name, std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small frames and a thin model so checkpoint-dependent tests run in
/// seconds; geometry matches the 16x16 synthetic corpus below.
const MICRO_CONFIG: &str = r#"
[synth]
frames = 40
image_height = 16
image_width = 16
count_min = 1
count_max = 3
blob_sigma = 1.5

[encoder]
input_height = 16
input_width = 16
block_channels = [4, 8]
reweight_channels = 4
deconv_channels = [8, 4]

[decoder]
layers = 1
hidden = 8
input_size = 8
sequence_length = 2
dropout = 0.0

[train]
epochs = 3
gt_sigma = 1.5
dropout = 0.0

[channel]
snr_db = 20.0
"#;

struct Fixture {
    config: PathBuf,
    dataset: PathBuf,
    checkpoint: PathBuf,
}

/// Shared corpus + trained checkpoint, built once per test process.
fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let root = fresh_dir("fixture");
        let config = root.join("micro.toml");
        fs::write(&config, MICRO_CONFIG).unwrap();
        let dataset = root.join("data");
        let train_out = root.join("run");
        ok(&["synth", "--config", config.to_str().unwrap(), "--out", dataset.to_str().unwrap(), "--seed", "7"]);
        ok(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--dataset",
            dataset.to_str().unwrap(),
            "--out",
            train_out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        Fixture { config, dataset, checkpoint: train_out.join("final.ckpt") }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Sorted (relative path, bytes) snapshot of a directory tree.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, acc: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, acc);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                acc.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc.sort_by(|a, b| a.0.cmp(&b.0));
    acc
}

#[test]
fn end_to_end_full_size_corpus() {
    let start = Instant::now();
    let root = fresh_dir("e2e");
    let config = root.join("e2e.toml");
    fs::write(&config, "[train]\nepochs = 3\n").unwrap();
    let dataset = root.join("data");
    let train_out = root.join("run");
    let eval_out = root.join("eval");

    let synth_msg = ok(&["synth", "--out", s(&dataset), "--seed", "7"]);
    assert!(synth_msg.contains("64 frames"), "default corpus is 64 frames: {}", synth_msg);
    assert!(dataset.join("images").is_dir() && dataset.join("annotations").is_dir());

    ok(&[
        "train",
        "--config",
        s(&config),
        "--dataset",
        s(&dataset),
        "--out",
        s(&train_out),
    ]);
    for artifact in ["best.ckpt", "final.ckpt", "loss_history.csv", "manifest.toml"] {
        assert!(train_out.join(artifact).is_file(), "missing {}", artifact);
    }
    let history = fs::read_to_string(train_out.join("loss_history.csv")).unwrap();
    // one header plus a train and a validation row per epoch
    assert_eq!(history.lines().count(), 1 + 2 * 3, "history:\n{}", history);

    let table = ok(&[
        "eval",
        "--dataset",
        s(&dataset),
        "--checkpoint",
        s(&train_out.join("final.ckpt")),
        "--out",
        s(&eval_out),
    ]);
    assert!(table.contains("semcom"), "plain table printed:\n{}", table);
    let csv = fs::read_to_string(eval_out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,mae,mse,frames,snr_db,p"));
    let row = lines.next().expect("one data row");
    assert!(row.starts_with("semcom,"), "row: {}", row);
    let mae: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!(mae.is_finite() && mae >= 0.0);

    assert!(start.elapsed().as_secs() < 600, "pipeline took {:?}", start.elapsed());
}

#[test]
fn eval_missing_checkpoint_is_explicit_and_manifest_precedes_it() {
    let fix = fixture();
    let out = fresh_dir("missing-ckpt");
    let ghost = out.join("ghost.ckpt");
    let stderr = fail(&[
        "eval",
        "--dataset",
        s(&fix.dataset),
        "--checkpoint",
        s(&ghost),
        "--out",
        s(&out),
    ]);
    assert!(stderr.contains("checkpoint not found"), "stderr: {}", stderr);
    // the manifest is written before any computation, so it survives
    assert!(out.join("manifest.toml").is_file());
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let root = fresh_dir("badkey");
    let config = root.join("bad.toml");
    fs::write(&config, "[train]\nlerning_rate = 0.1\n").unwrap();
    let stderr = fail(&["synth", "--config", s(&config), "--out", s(&root.join("out"))]);
    assert!(stderr.contains("lerning_rate"), "stderr: {}", stderr);
    assert!(stderr.contains("unknown field"), "stderr: {}", stderr);
}

#[test]
fn negative_epochs_is_rejected_by_name() {
    let root = fresh_dir("badtype");
    let config = root.join("bad.toml");
    fs::write(&config, "[train]\nepochs = -1\n").unwrap();
    let stderr = fail(&["synth", "--config", s(&config), "--out", s(&root.join("out"))]);
    assert!(stderr.contains("epochs"), "stderr: {}", stderr);
    assert!(stderr.contains("-1"), "stderr: {}", stderr);
}

#[test]
fn empty_config_echoes_all_defaults_in_manifest() {
    let root = fresh_dir("defaults");
    let config = root.join("empty.toml");
    fs::write(&config, "").unwrap();
    ok(&["synth", "--config", s(&config), "--out", s(&root.join("out"))]);
    let manifest = fs::read_to_string(root.join("out/manifest.toml")).unwrap();
    for expected in [
        "learning_rate = 0.001",
        "dropout = 0.1",
        "epochs = 100",
        "batch_size = 8",
        "lambda = 0.001",
        "p = 0.8",
    ] {
        assert!(manifest.contains(expected), "manifest lacks `{}`:\n{}", expected, manifest);
    }
}

#[test]
fn config_overrides_are_echoed_in_manifest() {
    let root = fresh_dir("override");
    let config = root.join("lambda.toml");
    fs::write(&config, "[train]\nlambda = 0.5\n\n[synth]\nframes = 4\nimage_height = 16\nimage_width = 16\n").unwrap();
    ok(&["synth", "--config", s(&config), "--out", s(&root.join("out"))]);
    let manifest = fs::read_to_string(root.join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("lambda = 0.5"), "manifest:\n{}", manifest);
    // flag overrides beat the file and are echoed too
    ok(&["synth", "--config", s(&config), "--out", s(&root.join("out2")), "--seed", "99"]);
    let manifest2 = fs::read_to_string(root.join("out2/manifest.toml")).unwrap();
    assert!(manifest2.contains("seed = 99"), "manifest:\n{}", manifest2);
}

#[test]
fn identical_runs_produce_identical_csvs() {
    let fix = fixture();
    let out_a = fresh_dir("det-a");
    let out_b = fresh_dir("det-b");
    for out in [&out_a, &out_b] {
        ok(&[
            "eval",
            "--config",
            s(&fix.config),
            "--dataset",
            s(&fix.dataset),
            "--checkpoint",
            s(&fix.checkpoint),
            "--out",
            s(out),
        ]);
        ok(&[
            "sweep",
            "--config",
            s(&fix.config),
            "--dataset",
            s(&fix.dataset),
            "--checkpoint",
            s(&fix.checkpoint),
            "--out",
            s(out),
            "--p-grid",
            "0,0.5,1",
        ]);
    }
    assert_eq!(
        fs::read(out_a.join("metrics.csv")).unwrap(),
        fs::read(out_b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out_a.join("sweep.csv")).unwrap(),
        fs::read(out_b.join("sweep.csv")).unwrap()
    );
}

#[test]
fn no_command_mutates_the_dataset() {
    let fix = fixture();
    let before = snapshot(&fix.dataset);
    let root = fresh_dir("immutable");
    ok(&[
        "train",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--out",
        s(&root.join("train")),
    ]);
    ok(&[
        "eval",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--checkpoint",
        s(&fix.checkpoint),
        "--out",
        s(&root.join("eval")),
    ]);
    ok(&[
        "sweep",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--checkpoint",
        s(&fix.checkpoint),
        "--out",
        s(&root.join("sweep")),
        "--p-grid",
        "0,1",
    ]);
    ok(&[
        "overhead",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--out",
        s(&root.join("overhead")),
    ]);
    assert_eq!(before, snapshot(&fix.dataset), "dataset changed");
}

#[test]
fn partial_outputs_are_removed_on_failure() {
    let fix = fixture();
    let out = fresh_dir("cleanup");
    // a directory squatting on the loss CSV path makes fit fail after the
    // checkpoints were already written
    fs::create_dir_all(out.join("loss_history.csv")).unwrap();
    fail(&[
        "train",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--out",
        s(&out),
    ]);
    assert!(!out.join("best.ckpt").exists(), "partial best.ckpt kept");
    assert!(!out.join("final.ckpt").exists(), "partial final.ckpt kept");
    assert!(out.join("loss_history.csv").is_dir(), "pre-existing path removed");
    assert!(out.join("manifest.toml").is_file());
}

#[test]
fn sweep_emits_curve_and_argmin() {
    let fix = fixture();
    let out = fresh_dir("sweep");
    let stdout = ok(&[
        "sweep",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--checkpoint",
        s(&fix.checkpoint),
        "--out",
        s(&out),
        "--p-grid",
        "0,0.25,0.5,0.75,1",
    ]);
    assert!(stdout.contains("best p"), "stdout: {}", stdout);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "p,mae,mse,frames,snr_db");
    assert_eq!(lines.len(), 1 + 5);
    for row in &lines[1..] {
        let mae: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(mae.is_finite());
    }
}

#[test]
fn overhead_reports_byte_accounting() {
    let fix = fixture();
    let out = fresh_dir("overhead");
    ok(&[
        "overhead",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--out",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("overhead.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "raw_bytes,encoded_bytes,reduction_pct");
    let fields: Vec<&str> = lines[1].split(',').collect();
    let raw: u64 = fields[0].parse().unwrap();
    let encoded: u64 = fields[1].parse().unwrap();
    let reduction: f64 = fields[2].parse().unwrap();
    assert!(raw > 0 && encoded > 0);
    assert!((reduction - 100.0 * (raw as f64 - encoded as f64) / raw as f64).abs() < 1e-9);
}

#[test]
fn output_into_dataset_directory_is_rejected() {
    let fix = fixture();
    let stderr = fail(&[
        "train",
        "--config",
        s(&fix.config),
        "--dataset",
        s(&fix.dataset),
        "--out",
        s(&fix.dataset),
    ]);
    assert!(stderr.contains("dataset directory"), "stderr: {}", stderr);
}

#[test]
fn malformed_p_grid_is_rejected() {
    let fix = fixture();
    let out = fresh_dir("badgrid");
    let stderr = fail(&[
        "sweep",
        "--dataset",
        s(&fix.dataset),
        "--checkpoint",
        s(&fix.checkpoint),
        "--out",
        s(&out),
        "--p-grid",
        "0,abc,1",
    ]);
    assert!(stderr.contains("abc"), "stderr: {}", stderr);
}
