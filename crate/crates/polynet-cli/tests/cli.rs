//! CLI contract tests: exit codes, expand/degree behavior on hand-built
//! checkpoints, config validation messages, and input immutability.

use polynet::blocks::{save_checkpoint, Block, BlockParams, CcpParams, InitScheme, PolyBlockSpec, ProductNet, Stabilizer};
use polynet::Tensor;
use std::path::{Path, PathBuf};
use std::process::Command;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_polynet")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

/// The hand CCP block realizing z1 + z1*z2.
fn hand_ccp_net() -> ProductNet {
    let params = CcpParams {
        u: vec![
            Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap(),
            Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap(),
        ],
        c: Tensor::ones(&[1, 1]),
        beta: Tensor::zeros(&[1]),
    };
    ProductNet::single(Block::new(PolyBlockSpec::ccp(2, 1, 2, 1), BlockParams::Ccp(params)).unwrap())
}

#[test]
fn expand_hand_ccp_lists_exactly_two_monomials() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("hand.pnet");
    save_checkpoint(&hand_ccp_net(), &ckpt).unwrap();
    let out = Command::new(binary())
        .args(["expand"])
        .arg(&ckpt)
        .args(["--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("z1 "), "{stdout}");
    assert!(stdout.contains("z1*z2"), "{stdout}");
    // Only those two coefficients survive the threshold.
    let coeff_lines: Vec<&str> = stdout
        .lines()
        .filter(|l| l.starts_with("  ") && !l.trim_start().starts_with('('))
        .collect();
    assert_eq!(coeff_lines.len(), 2, "{stdout}");
    // Machine-readable variant carries every coefficient, numerically exact
    // to fit precision.
    let kv = std::fs::read_to_string(dir.path().join("expand.kv")).unwrap();
    assert!(kv.contains("input_dim = 2"), "{kv}");
    let get = |key: &str| -> f64 {
        kv.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("{key} missing in {kv}"))
            .split(" = ")
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((get("coeff.out0.z1 ") - 1.0).abs() < 1e-10);
    assert!((get("coeff.out0.z1*z2 ") - 1.0).abs() < 1e-10);
    assert!(get("coeff.out0.z2 ").abs() < 1e-10);
    assert!(get("coeff.out0.z1^2 ").abs() < 1e-10);
}

#[test]
fn expand_affine_checkpoint_matches_entries() {
    // N = 1 CCP: y = C U^T z + β.
    let u = Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let c = Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
    let beta = Tensor::from_vec(vec![0.125]);
    let net = ProductNet::single(
        Block::new(
            PolyBlockSpec::ccp(2, 1, 1, 2),
            BlockParams::Ccp(CcpParams { u: vec![u.clone()], c: c.clone(), beta: beta.clone() }),
        )
        .unwrap(),
    );
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("affine.pnet");
    save_checkpoint(&net, &ckpt).unwrap();
    let out = Command::new(binary())
        .args(["expand"])
        .arg(&ckpt)
        .args(["--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let kv = std::fs::read_to_string(dir.path().join("expand.kv")).unwrap();
    // Expected affine map: w = U C^T per coordinate; y = w1 z1 + w2 z2 + β.
    let w1 = 0.5 * 1.0 - 1.0 * 3.0; // -2.5
    let w2 = 2.0 * 1.0 + 0.25 * 3.0; // 2.75
    let get = |key: &str| -> f64 {
        kv.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("{key} missing in {kv}"))
            .split(" = ")
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((get("coeff.out0.1 ") - 0.125).abs() < 1e-10);
    assert!((get("coeff.out0.z1 ") - w1).abs() < 1e-10);
    assert!((get("coeff.out0.z2 ") - w2).abs() < 1e-10);
}

#[test]
fn expand_refuses_over_budget_with_binomial_in_message() {
    // d = 10, N = 6: C(16, 6) = 8008 > 5000.
    let net = ProductNet::single(Block::init(PolyBlockSpec::ccp(10, 1, 6, 2), 0, InitScheme::Generic).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("big.pnet");
    save_checkpoint(&net, &ckpt).unwrap();
    let out = Command::new(binary()).args(["expand"]).arg(&ckpt).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("8008"), "{stderr}");
    assert!(stderr.contains("C(16, 6)"), "{stderr}");
}

#[test]
fn degree_prints_product_law() {
    // Two chained degree-2 blocks probe to 4.
    let b1 = Block::init(PolyBlockSpec::ccp(2, 2, 2, 2), 5, InitScheme::Generic).unwrap();
    let b2 = Block::init(PolyBlockSpec::ccp(2, 2, 2, 2), 6, InitScheme::Generic).unwrap();
    let net = ProductNet::new(vec![b1, b2]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("prod.pnet");
    save_checkpoint(&net, &ckpt).unwrap();
    let out = Command::new(binary()).args(["degree"]).arg(&ckpt).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("overall: 4"), "{stdout}");
    assert!(stdout.contains("matches declared total degree 4"), "{stdout}");
}

#[test]
fn degree_affine_prints_one() {
    let net = ProductNet::single(Block::init(PolyBlockSpec::ccp(3, 2, 1, 2), 1, InitScheme::Generic).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("affine.pnet");
    save_checkpoint(&net, &ckpt).unwrap();
    let out = Command::new(binary()).args(["degree"]).arg(&ckpt).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("overall: 1"), "{stdout}");
}

#[test]
fn degree_flags_tanh_stabilized_as_non_polynomial() {
    let params = CcpParams {
        u: vec![
            Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap(),
            Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap(),
        ],
        c: Tensor::ones(&[1, 1]),
        beta: Tensor::zeros(&[1]),
    };
    let spec = PolyBlockSpec::ccp(2, 1, 2, 1).with_stabilizer(Stabilizer::Tanh);
    let net = ProductNet::single(Block::new(spec, BlockParams::Ccp(params)).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("tanh.pnet");
    save_checkpoint(&net, &ckpt).unwrap();
    let out = Command::new(binary())
        .args(["degree"])
        .arg(&ckpt)
        .args(["--max-degree", "8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("exceeds max"), "{stdout}");
    assert!(stdout.contains("not a polynomial"), "{stdout}");
}

#[test]
fn negative_learning_rate_exits_2_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        r#"{
            "seed": 1,
            "output_dir": "out",
            "dataset": { "kind": "xor", "n": 16 },
            "model": { "blocks": [{ "variant": "ccp", "order": 2, "rank": 2 }] },
            "train": {
                "optimizer": { "kind": "adam", "lr": -0.5 },
                "loss": "softmax-cross-entropy",
                "epochs": 1
            }
        }"#,
    )
    .unwrap();
    let out = Command::new(binary()).args(["train"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("optimizer.lr"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("typo.json");
    std::fs::write(
        &config,
        r#"{ "seed": 1, "output_dir": "out", "learning_rate": 0.1 }"#,
    )
    .unwrap();
    let out = Command::new(binary()).args(["train"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("learning_rate"), "{stderr}");
}

#[test]
fn missing_files_exit_3() {
    let out = Command::new(binary()).args(["degree", "/nonexistent/x.pnet"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_error_exits_2() {
    let out = Command::new(binary()).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_grid_restricted_to_affine_passes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("affine_grid.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
                "seed": 0,
                "output_dir": {:?},
                "verify": {{ "grid": {{ "orders": [1], "seeds": [0, 1] }} }}
            }}"#,
            dir.path().join("out")
        ),
    )
    .unwrap();
    let out = Command::new(binary()).args(["verify"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn output_root_env_var_redirects_relative_output_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(
        &config,
        r#"{
            "seed": 3,
            "output_dir": "runs/tiny",
            "dataset": { "kind": "xor", "n": 16 },
            "model": { "blocks": [{ "variant": "ccp", "order": 2, "rank": 2 }] },
            "train": {
                "optimizer": { "kind": "adam", "lr": 0.01 },
                "loss": "softmax-cross-entropy",
                "epochs": 1
            }
        }"#,
    )
    .unwrap();
    let out = Command::new(binary())
        .args(["train"])
        .arg(&config)
        .env("POLYNET_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("runs/tiny/metrics.csv").exists());
}

#[test]
fn commands_do_not_mutate_inputs() {
    let recipe = repo_root().join("recipes/xor.json");
    let before = std::fs::read(&recipe).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(binary())
        .args(["train"])
        .arg(&recipe)
        .args(["--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(before, std::fs::read(&recipe).unwrap());
}

#[test]
fn polynomial_regression_dataset_trains() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("poly.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
                "seed": 5,
                "output_dir": {:?},
                "dataset": {{ "kind": "polynomial-regression", "n": 128, "dim": 2, "degree": 2 }},
                "model": {{ "blocks": [{{ "variant": "ccp", "order": 2, "rank": 4 }}] }},
                "train": {{
                    "optimizer": {{ "kind": "adam", "lr": 0.02 }},
                    "loss": "mse",
                    "epochs": 5
                }}
            }}"#,
            dir.path().join("out")
        ),
    )
    .unwrap();
    let out = Command::new(binary()).args(["train"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/summary.json").exists());
}

#[test]
fn csv_dataset_trains_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut rows = String::from("x1,x2,y\n");
    for i in 0..40 {
        let a = (i % 2) as f64;
        let b = ((i / 2) % 2) as f64;
        rows.push_str(&format!("{a},{b},{}\n", ((a + b) as i64) % 2));
    }
    std::fs::write(&csv, rows).unwrap();
    let config = dir.path().join("csv.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
                "seed": 5,
                "output_dir": {:?},
                "dataset": {{ "kind": "csv", "path": "data.csv", "label_column": "y", "classes": 2 }},
                "model": {{ "blocks": [{{ "variant": "ncp-skip", "order": 2, "rank": 4 }}], "init": "ones-bias" }},
                "train": {{
                    "optimizer": {{ "kind": "adam", "lr": 0.02 }},
                    "loss": "softmax-cross-entropy",
                    "epochs": 40
                }}
            }}"#,
            dir.path().join("out")
        ),
    )
    .unwrap();
    let out = Command::new(binary()).args(["train"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // The csv path resolves relative to the config file's directory.
    let summary = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(json["train"]["accuracy"].as_f64().unwrap(), 1.0, "{summary}");
}

#[test]
fn checkpoint_every_writes_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ckpt.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
                "seed": 2,
                "output_dir": {:?},
                "dataset": {{ "kind": "xor", "n": 32 }},
                "model": {{ "blocks": [{{ "variant": "ccp", "order": 2, "rank": 2 }}] }},
                "train": {{
                    "optimizer": {{ "kind": "adam", "lr": 0.01 }},
                    "loss": "softmax-cross-entropy",
                    "epochs": 4,
                    "checkpoint_every": 2
                }}
            }}"#,
            dir.path().join("out")
        ),
    )
    .unwrap();
    let out = Command::new(binary()).args(["train"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/checkpoint_epoch0002.pnet").exists());
    assert!(dir.path().join("out/checkpoint_epoch0004.pnet").exists());
    assert!(dir.path().join("out/checkpoint.pnet").exists());
}
