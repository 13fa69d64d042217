//! Acceptance suite, CLI half: MNIST without activations (criterion 5),
//! recipe determinism (criterion 7), and checkpoint mutation sensitivity
//! (criterion 8), all through the real binary and the committed recipes.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_polynet")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn run_train(recipe: &Path, out_dir: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(binary())
        .arg("train")
        .arg(recipe)
        .arg("--output-dir")
        .arg(out_dir)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn summary_accuracy(out_dir: &Path, split: &str) -> f64 {
    let text = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json[split]["accuracy"].as_f64().unwrap_or_else(|| panic!("no {split} accuracy in {text}"))
}

fn expected_accuracy(recipe: &Path) -> f64 {
    let text = std::fs::read_to_string(recipe).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["expected"]["test_accuracy"].as_f64().expect("recipe pins expected.test_accuracy")
}

#[test]
fn criterion_5a_mnist_binary() {
    let recipe = repo_root().join("recipes/mnist_binary.json");
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let output = run_train(&recipe, dir.path(), &[]);
    let elapsed = started.elapsed();
    assert!(
        output.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let acc = summary_accuracy(dir.path(), "test");
    let pinned = expected_accuracy(&recipe);
    assert!(acc >= 0.98, "criterion 5a: test accuracy {acc} < 0.98");
    assert!(
        (acc - pinned).abs() <= 0.005,
        "criterion 5a: accuracy {acc} drifted from pinned {pinned} by more than 0.5%"
    );
    assert!(elapsed.as_secs() <= 900, "criterion 5a runtime {elapsed:?} exceeds 15 min");
    println!(
        "criterion 5a (mnist 0-vs-1, ncp N=2 k=32, no activations): PASS: test accuracy {acc} (pinned {pinned} ± 0.005), {:.1?}",
        elapsed
    );
}

#[test]
fn criterion_5b_mnist_ten_class() {
    let recipe = repo_root().join("recipes/mnist_10class.json");
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let output = run_train(&recipe, dir.path(), &[]);
    let elapsed = started.elapsed();
    assert!(
        output.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let acc = summary_accuracy(dir.path(), "test");
    let pinned = expected_accuracy(&recipe);
    assert!(acc >= 0.92, "criterion 5b: test accuracy {acc} < 0.92");
    assert!(
        (acc - pinned).abs() <= 0.005,
        "criterion 5b: accuracy {acc} drifted from pinned {pinned} by more than 0.5%"
    );
    assert!(elapsed.as_secs() <= 900, "criterion 5b runtime {elapsed:?} exceeds 15 min");
    println!(
        "criterion 5b (mnist 10-class, two degree-2 blocks, no activations): PASS: test accuracy {acc} (pinned {pinned} ± 0.005), {:.1?}",
        elapsed
    );
}

#[test]
fn mnist_binary_metrics_reproduce_bit_exactly() {
    // Same seed, same reported numbers, byte for byte.
    let recipe = repo_root().join("recipes/mnist_binary.json");
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = run_train(&recipe, dir.path(), &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let summary_a = std::fs::read(dir_a.path().join("summary.json")).unwrap();
    let summary_b = std::fs::read(dir_b.path().join("summary.json")).unwrap();
    assert_eq!(summary_a, summary_b);
    let metrics_a = std::fs::read(dir_a.path().join("metrics.csv")).unwrap();
    let metrics_b = std::fs::read(dir_b.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b);
}

#[test]
fn criterion_7_recipe_determinism() {
    let recipe = repo_root().join("recipes/xor.json");
    let dir_a = tempfile::tempdir().unwrap();
    let output = run_train(&recipe, dir_a.path(), &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    // Rerun from the resolved config written by the first run.
    let resolved = dir_a.path().join("config.resolved.json");
    assert!(resolved.exists());
    let dir_b = tempfile::tempdir().unwrap();
    let output = run_train(&resolved, dir_b.path(), &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let metrics_a = std::fs::read(dir_a.path().join("metrics.csv")).unwrap();
    let metrics_b = std::fs::read(dir_b.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b, "criterion 7: metrics.csv differs across reruns");
    let ckpt_a = std::fs::read(dir_a.path().join("checkpoint.pnet")).unwrap();
    let ckpt_b = std::fs::read(dir_b.path().join("checkpoint.pnet")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "criterion 7: checkpoints differ across reruns");

    // The xor recipe's final training accuracy column reads 1.
    let text = String::from_utf8(metrics_a.clone()).unwrap();
    let last = text.lines().last().unwrap();
    let accuracy_cell = last.split(',').nth(2).unwrap();
    assert_eq!(accuracy_cell, "1", "final metrics row: {last}");
    println!(
        "criterion 7 (determinism): PASS: resolved-config rerun reproduces metrics.csv ({} bytes) and checkpoint bit-identically",
        metrics_a.len()
    );
}

#[test]
fn criterion_8_mutation_sensitivity() {
    let recipe = repo_root().join("recipes/xor.json");
    let dir = tempfile::tempdir().unwrap();
    let output = run_train(&recipe, dir.path(), &[]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let ckpt_path = dir.path().join("checkpoint.pnet");
    let bytes = std::fs::read(&ckpt_path).unwrap();

    // Sanity: the intact checkpoint verifies clean.
    let ok = Command::new(binary())
        .args(["verify", "--checkpoint"])
        .arg(&ckpt_path)
        .args(["--output-dir"])
        .arg(dir.path().join("v0"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "intact checkpoint failed verify");

    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + header_len;
    // Flip single parameter bytes, including the mantissa LSB of the first
    // stored f64, the flip no oracle tolerance could ever see.
    for (i, offset) in [payload_start, payload_start + 7, (payload_start + bytes.len() - 8) / 2]
        .into_iter()
        .enumerate()
    {
        let mut corrupt = bytes.clone();
        corrupt[offset] ^= 0x01;
        let path = dir.path().join(format!("corrupt{i}.pnet"));
        std::fs::write(&path, &corrupt).unwrap();
        let out = Command::new(binary())
            .args(["verify", "--checkpoint"])
            .arg(&path)
            .args(["--output-dir"])
            .arg(dir.path().join(format!("v{i}")))
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(1),
            "criterion 8: flipped byte at {offset} not rejected: {}",
            String::from_utf8_lossy(&out.stdout)
        );
    }
    println!("criterion 8 (mutation sensitivity): PASS: every tested parameter byte flip makes verify exit 1");
}
