mod common;

use std::path::Path;
use std::process::{Command, Output};

use mtnet::cli::ExperimentReport;
use mtnet::data::io::write_encoded;
use serde_json::json;

fn mtnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtnet")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = mtnet(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, name: &str, cfg: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_report(dir: &Path) -> ExperimentReport {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

/// Toy cohort on disk plus a config for a small, quick model.
fn toy_config(dir: &Path, extra: serde_json::Value) -> String {
    write_encoded(&dir.join("toy.bin"), &common::separable_cohort(200, 2, 4, 1)).unwrap();
    let mut cfg = json!({
        "data": {"encoded": "toy.bin"},
        "model": {"lstm_units": 8, "feature_dim": 4},
        "train": {"epochs": 5, "batch_size": 32, "batches_per_epoch": 5},
        "eval": {"seeds": [1, 2]}
    });
    merge(&mut cfg, extra);
    write_config(dir, "config.json", cfg)
}

fn merge(base: &mut serde_json::Value, extra: serde_json::Value) {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        for (k, v) in e {
            match b.get_mut(&k) {
                Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                _ => {
                    b.insert(k, v);
                }
            }
        }
    }
}

#[test]
fn generate_writes_deterministic_cohort_files() {
    let dir = tempfile::tempdir().unwrap();
    let synth = json!({"n_subjects": 1000, "n_numeric": 10, "n_categorical": 5, "positive_rate": 0.06});
    let cfg = write_config(dir.path(), "gen.json", json!({"data": {"synth": synth}}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["generate", "--config", &cfg, "--out", a.to_str().unwrap(), "--quiet"]);
    run_ok(&["generate", "--config", &cfg, "--out", b.to_str().unwrap(), "--quiet"]);
    for f in ["schema.json", "raw.csv", "labels.csv", "archetypes.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let raw = std::fs::read(a.join("raw.csv")).unwrap();
    assert_eq!(raw, std::fs::read(b.join("raw.csv")).unwrap());
    assert_eq!(String::from_utf8(raw).unwrap().lines().count(), 1 + 1000 * 7);
    let labels = std::fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 60);
}

#[test]
fn generated_files_feed_preprocess_and_train() {
    let dir = tempfile::tempdir().unwrap();
    let synth = json!({"n_subjects": 300, "n_numeric": 6, "n_categorical": 3, "n_archetypes": 2, "positive_rate": 0.1, "trend_strength": 3.0});
    let gen = write_config(dir.path(), "gen.json", json!({"data": {"synth": synth}}));
    let cohort = dir.path().join("cohort");
    run_ok(&["generate", "--config", &gen, "--out", cohort.to_str().unwrap(), "--quiet"]);

    let cfg = write_config(
        dir.path(),
        "train.json",
        json!({
            "data": {"schema": "cohort/schema.json", "raw": "cohort/raw.csv", "labels": "cohort/labels.csv"},
            "model": {"lstm_units": 8, "feature_dim": 4},
            "train": {"epochs": 2, "batch_size": 16, "batches_per_epoch": 3},
            "eval": {"seeds": [3]}
        }),
    );
    let pre = dir.path().join("pre");
    run_ok(&["preprocess", "--config", &cfg, "--out", pre.to_str().unwrap(), "--quiet"]);
    let enc = mtnet::data::io::read_encoded(&pre.join("cohort.bin")).unwrap();
    assert_eq!((enc.len(), enc.waves, enc.dim), (300, 5, 6 + 3 * 3));
    assert!(pre.join("split.json").is_file());

    let out = dir.path().join("run");
    run_ok(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert!(out.join("checkpoints/seed_3.ckpt").is_file());
}

#[test]
fn train_then_evaluate_on_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(
        dir.path(),
        json!({"train": {"epochs": 30, "batch_size": 256, "batches_per_epoch": 20}, "eval": {"seeds": [1, 2, 3, 4, 5], "split": "train"}}),
    );
    let out = dir.path().join("run");
    run_ok(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    for s in 1..=5 {
        assert!(out.join(format!("checkpoints/seed_{s}.ckpt")).is_file());
    }
    let trained = read_report(&out);
    assert_eq!(trained.cells.len(), 1);
    assert_eq!(trained.cells[0].report.per_seed.len(), 5);
    assert_eq!(trained.rows.len(), 5);
    for row in &trained.rows {
        assert_eq!(row.result.auc_roc, 1.0);
    }

    run_ok(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    let evaluated = read_report(&out);
    assert_eq!(evaluated.command, "evaluate");
    assert_eq!(evaluated.rows, trained.rows);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().nth(1).unwrap().starts_with("MTNet,1,1,1,"));
}

#[test]
fn reruns_are_byte_identical_and_embed_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), json!({}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["train", "--config", &cfg, "--out", a.to_str().unwrap(), "--quiet"]);
    run_ok(&["train", "--config", &cfg, "--out", b.to_str().unwrap(), "--quiet"]);
    for f in ["report.json", "results.csv", "checkpoints/seed_1.ckpt", "checkpoints/seed_2.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = read_report(&a);
    assert_eq!(report.config.train.epochs, 5);
    assert_eq!(report.config.model.input_dim, 4);
}

#[test]
fn seed_override_trains_a_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), json!({}));
    let out = dir.path().join("run");
    run_ok(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9", "--quiet"]);
    let report = read_report(&out);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].seed, 9);
}

#[test]
fn ablation_has_five_rows_and_lstm_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), json!({}));
    let out = dir.path().join("ablate");
    run_ok(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    let report = read_report(&out);
    let names: Vec<&str> = report.cells.iter().map(|c| c.method.as_str()).collect();
    assert_eq!(names, ["LSTM", "LSTM+l_a", "LSTM+l_o", "LSTM+l_a+l_o", "MTNet"]);
    for c in &report.cells {
        assert!((0.0..=1.0).contains(&c.report.mean.auc_pr));
    }

    let plain = toy_config(
        dir.path(),
        json!({"train": {"use_l_a": false, "use_l_o": false, "use_augmentation": false}}),
    );
    let out_plain = dir.path().join("plain");
    run_ok(&["train", "--config", &plain, "--out", out_plain.to_str().unwrap(), "--quiet"]);
    let plain_report = read_report(&out_plain);
    let lstm_rows: Vec<_> = report.rows.iter().filter(|r| r.method == "LSTM").cloned().collect();
    assert_eq!(lstm_rows, plain_report.rows);
}

#[test]
fn sample_efficiency_grid_and_identity_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), json!({"experiment": {"fractions": [0.5, 1.0]}}));
    let out = dir.path().join("eff");
    run_ok(&["sample-efficiency", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    let report = read_report(&out);
    assert_eq!(report.cells.len(), 4);
    let full_mtnet: Vec<_> = report.rows.iter().filter(|r| r.method == "MTNet" && r.fraction == 1.0).cloned().collect();

    let out_train = dir.path().join("train");
    run_ok(&["train", "--config", &cfg, "--out", out_train.to_str().unwrap(), "--quiet"]);
    assert_eq!(full_mtnet, read_report(&out_train).rows);
    // Every cell is scored on the same test subjects.
    let n_test: Vec<usize> = report.rows.iter().map(|r| r.result.n_pos + r.result.n_neg).collect();
    assert!(n_test.iter().all(|&n| n == report.split_sizes[2]));
}

#[test]
fn fraction_that_empties_a_class_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), json!({"experiment": {"fractions": [0.001]}}));
    let out = mtnet(&["sample-efficiency", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap(), "--quiet"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fraction"));
}

#[test]
fn missing_data_path_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", json!({"data": {"encoded": "nope.bin"}}));
    let out = mtnet(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.bin") && err.contains("does not exist"), "{err}");
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", json!({"train": {"epocs": 3}}));
    let out = mtnet(&["train", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epocs"));
}

#[test]
fn divergence_exits_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), json!({"train": {"optimizer": {"lr": 1e300}}}));
    let out = mtnet(&["train", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap(), "--quiet"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}
