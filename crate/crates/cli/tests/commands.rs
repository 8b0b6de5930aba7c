//! Drives the `hum` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hum_cli::artifacts::{Manifest, MANIFEST_FILE};
use hum_cli::commands::{ablation_variants, CHECKPOINT_FILE, CURVE_CSV, EVAL_DIR, REPORT_JSON, STEPS_CSV};
use serde_json::json;

fn hum(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hum"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("HUM_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn tiny_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = json!({
        "seed": 3,
        "out": dir.join("run"),
        "gen": {"n_domains": 2, "users_per_domain": 12, "items_per_domain": 20, "interactions_per_user": 8},
        "encoder": {"d_model": 8, "n_heads": 2, "n_layers": 1, "ffn_dim": 8, "max_len": 96},
        "train": {"batch_size": 8, "negatives": 3, "max_epochs": 1, "balance": {"update_period": 2}}
    });
    merge(&mut cfg, extra);
    let path = dir.join(format!("config-{}.json", fs::read_dir(dir).unwrap().count()));
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn merge(base: &mut serde_json::Value, extra: serde_json::Value) {
    match (base, extra) {
        (serde_json::Value::Object(b), serde_json::Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = hum(&["train", "--config", "/nonexistent/hum.json"], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(code(&hum(&["train", "--bogus"], &[])), 2);
    assert_eq!(code(&hum(&[], &[])), 2);
}

#[test]
fn gen_is_deterministic_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = hum(&["gen", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(a.join("corpus.jsonl")).unwrap(), fs::read(b.join("corpus.jsonl")).unwrap());
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(a.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert!(manifest.outputs.contains_key("corpus.jsonl"));
    assert!(manifest.inputs.contains_key("config"));
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({"train": {"learning_rate": 1e300, "weight_decay": 0.0}}));
    let out = hum(&["train", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("run").join(CHECKPOINT_FILE).exists());
}

#[test]
fn train_then_eval_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({"eval": {"noise_fractions": [0.0, 1.0]}}));
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&hum(&["train", "--config", c], &[])), 0);
    let run = dir.path().join("run");
    assert!(run.join(CHECKPOINT_FILE).exists());
    assert!(!run.join(format!("{CHECKPOINT_FILE}.tmp")).exists());
    assert!(run.join("config.json").exists() && run.join(MANIFEST_FILE).exists());

    let eval = hum(&["eval", "--config", c], &[]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("macro") && stdout.contains("N@10"));
    let eval_dir = run.join(EVAL_DIR);
    for f in [REPORT_JSON, "report.csv", "buckets.csv", "noise.csv", "config.json", MANIFEST_FILE] {
        assert!(eval_dir.join(f).exists(), "{f} missing");
    }
    let noise = fs::read_to_string(eval_dir.join("noise.csv")).unwrap();
    assert_eq!(noise.lines().count(), 3);

    let report = hum(&["report", run.to_str().unwrap()], &[]);
    assert_eq!(code(&report), 0);
    assert!(String::from_utf8_lossy(&report.stdout).contains("Domain"));
}

#[test]
fn eval_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    assert_eq!(code(&hum(&["train", "--config", cfg.to_str().unwrap()], &[])), 0);
    let other = tiny_config(dir.path(), json!({"gen": {"seed": 99}, "out": dir.path().join("other")}));
    let ckpt = dir.path().join("run").join(CHECKPOINT_FILE);
    let out = hum(&["eval", "--config", other.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()], &[]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary hash mismatch"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&hum(&["train", "--config", c, "--out", a.to_str().unwrap(), "--threads", "1"], &[])), 0);
    assert_eq!(code(&hum(&["train", "--config", c, "--out", b.to_str().unwrap()], &[("HUM_THREADS", "3")])), 0);
    for f in [CHECKPOINT_FILE, STEPS_CSV] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    let out = dir.path().join("s");
    assert_eq!(code(&hum(&["train", "--config", c, "--out", out.to_str().unwrap(), "--seed", "41"], &[])), 0);
    let written: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["seed"], 41);
    assert_eq!(written["train"]["seed"], 41);
    assert_eq!(written["encoder"]["seed"], 41);
}

#[test]
fn sweep_spec_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    for spec in [r#"{"depth": [1, 2]}"#, r#"{"r": [0.1], "alpha": [1]}"#, r#"{"r": []}"#, r#"{"r": [1.5]}"#] {
        assert_eq!(code(&hum(&["sweep", "--config", c, "--spec", spec], &[])), 2, "{spec}");
    }
}

#[test]
fn sweeps_emit_one_curve_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    let c = cfg.to_str().unwrap();
    for (spec, rows) in [(r#"{"n_domains": [2, 3]}"#, 2), (r#"{"r": [0.1, 0.2, 0.3, 0.4]}"#, 4), (r#"{"noise": [0, 0.5, 1]}"#, 3)] {
        let out = dir.path().join(format!("sweep{rows}"));
        let o = hum(&["sweep", "--config", c, "--out", out.to_str().unwrap(), "--spec", spec], &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let curve = fs::read_to_string(out.join(CURVE_CSV)).unwrap();
        assert_eq!(curve.lines().count(), rows + 1, "{curve}");
    }
}

#[test]
fn ablation_names_every_variant() {
    let names: Vec<&str> = ablation_variants().iter().map(|v| v.0).collect();
    assert_eq!(
        names,
        [
            "HUM",
            "HUM w/o prompt",
            "HUM w/o user token",
            "HUM w/o user token & prompt",
            "HUM w/o mask",
            "HUM w/o DI",
            "HUM bidirectional"
        ]
    );
}
