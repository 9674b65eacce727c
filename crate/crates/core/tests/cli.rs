mod common;

use std::path::Path;

use common::*;
use serde_json::Value;

const SMALL: &str = r#"{"n_samples": 30, "hyper": {"g_n": 4, "g_dim": 8}, "train": {"epochs": 2, "batch_size": 4, "learning_rate": 1e-3}}"#;

fn pipeline(dir: &Path, out: &str, extra: &[&str]) {
    let config = write_config(dir, SMALL);
    let cfg = config.to_str().unwrap();
    let out = dir.join(out);
    let out = out.to_str().unwrap();
    for cmd in [&["gen-data"][..], &["train"], &["sweep", "--m-r", "0,0.5"]] {
        let mut args = vec!["--config", cfg, "--out", out];
        args.extend_from_slice(extra);
        args.extend_from_slice(cmd);
        run_ok(&args);
    }
}

fn bytes(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn repeated_pipeline_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "a", &[]);
    pipeline(dir.path(), "b", &[]);
    for file in [
        "manifest.json",
        "sweep.json",
        "sweep.csv",
        "models/gcn+glspr+sc/checkpoint.json",
        "models/gcn+glspr+sc/trace.csv",
        "models/baseline/test_eval.json",
    ] {
        assert_eq!(
            bytes(dir.path().join("a").join(file)),
            bytes(dir.path().join("b").join(file)),
            "{file} differs"
        );
    }
}

#[test]
fn outputs_match_published_schemas() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "run", &["--ablate", "gcn,full"]);
    let run = dir.path().join("run");
    assert_valid("manifest", &run.join("manifest.json"));
    assert_valid("sweep", &run.join("sweep.json"));
    for model in ["gcn", "gcn+glspr+sc", "baseline"] {
        assert_valid(
            "train_eval",
            &run.join("models").join(model).join("test_eval.json"),
        );
    }

    let cfg = dir.path().join("config.json");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "hyper-sweep",
        "--axis",
        "alpha",
        "--values",
        "0,1e-3",
    ]);
    assert_valid("hyper_sweep", &run.join("hyper_alpha.json"));

    let ck = run.join("models/gcn+glspr+sc/checkpoint.json");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "audit",
        "--checkpoint",
        ck.to_str().unwrap(),
    ]);
    assert_valid("spectral", &run.join("audit/spectral.json"));
    assert_valid("convergence", &run.join("audit/convergence.json"));
    let ratios = std::fs::read_to_string(run.join("audit/ratios.csv")).unwrap();
    assert!(ratios.starts_with("step,ratio\n"));

    let default_config: Value =
        serde_json::to_value(grace::harness::ExperimentConfig::default()).unwrap();
    assert!(schema_errors("config", &default_config).is_empty());
}

#[test]
fn sweep_clean_row_equals_training_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "run", &["--mask-mode", "black"]);
    let run = dir.path().join("run");
    let sweep: grace::harness::EvalReport =
        serde_json::from_value(read_value(&run.join("sweep.json"))).unwrap();
    for model in ["gcn+glspr+sc", "baseline"] {
        let report: grace::harness::TrainReport = serde_json::from_value(read_value(
            &run.join("models").join(model).join("test_eval.json"),
        ))
        .unwrap();
        let row = sweep
            .find(model, 0.0, grace::feature_context::MaskMode::Black)
            .unwrap();
        // fingerprints differ: the sweep ran with its own ratio list
        let mut row = row.clone();
        row.config_fingerprint = report.test.config_fingerprint.clone();
        assert_eq!(row, report.test, "{model}");
    }
    assert!(sweep
        .rows
        .iter()
        .all(|r| r.mode == grace::feature_context::MaskMode::Black));
}

#[test]
fn resume_extends_to_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let cfg = config.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());
    for out in [a, b] {
        run_ok(&["--config", cfg, "--out", out, "gen-data"]);
    }
    run_ok(&["--config", cfg, "--out", a, "train"]);
    run_ok(&["--config", cfg, "--out", b, "train", "--epochs", "1"]);
    run_ok(&["--config", cfg, "--out", b, "train", "--resume"]);
    for model in ["gcn+glspr+sc", "baseline"] {
        let ck = format!("models/{model}/checkpoint.json");
        assert_eq!(
            bytes(Path::new(a).join(&ck)),
            bytes(Path::new(b).join(&ck)),
            "{model}"
        );
    }

    // a different seed must not resume someone else's checkpoint
    let out = run(&[
        "--config", cfg, "--out", a, "--seed", "7", "train", "--resume",
    ]);
    assert!(!out.status.success());
}

#[test]
fn ablation_flag_selects_variants() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "run", &["--ablate", "all"]);
    let run = dir.path().join("run");
    for (flag, dir_name, glspr, sc) in [
        ("gcn", "gcn", false, false),
        ("glspr", "gcn+glspr", true, false),
        ("sc", "gcn+sc", false, true),
        ("full", "gcn+glspr+sc", true, true),
    ] {
        let ck = read_value(&run.join("models").join(dir_name).join("checkpoint.json"));
        let hyper = &ck["model"]["hyper"];
        assert_eq!(hyper["glspr_enabled"], Value::Bool(glspr), "{flag}");
        assert_eq!(hyper["sc_enabled"], Value::Bool(sc), "{flag}");
    }
    let sweep = read_value(&run.join("sweep.json"));
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 5 * 2 * 2);
}

fn error_of(out: &std::process::Output) -> Value {
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(schema_errors("error", &err).is_empty(), "{err}");
    err
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("empty");
    let out = run(&["--out", out_dir.to_str().unwrap(), "sweep"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["kind"], "missing_input");

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");

    let out = run(&[
        "--m-r",
        "0,2",
        "--out",
        out_dir.to_str().unwrap(),
        "gen-data",
    ]);
    assert_eq!(out.status.code(), Some(1));
    error_of(&out);

    let out = run(&["--ablate", "everything", "gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    error_of(&out);

    let bad = write_config(dir.path(), "{\"n_samples\": \"many\"}");
    let out = run(&["--config", bad.to_str().unwrap(), "gen-data"]);
    assert_eq!(out.status.code(), Some(1));
    error_of(&out);
}
