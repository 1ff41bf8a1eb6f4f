use std::path::Path;
use std::process::{Command, Output};

use stormsurge::docio::write_config;
use stormsurge::storm_data::{GeneratorConfig, GridSpec};
use stormsurge::training::TrainConfig;

fn stormsurge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stormsurge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Last stderr line, which carries the machine-parsable category on failure.
fn error_category(out: &Output) -> String {
    let err = stderr(out);
    let line = err.lines().last().unwrap_or_default().to_string();
    line.strip_prefix("error[")
        .and_then(|rest| rest.split_once(']'))
        .map(|(cat, _)| cat.to_string())
        .unwrap_or_else(|| panic!("no error category in {err:?}"))
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(stormsurge(&[]).status.code(), Some(2));
    assert_eq!(stormsurge(&["train", "--out", "x"]).status.code(), Some(2));
    assert_eq!(stormsurge(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn help_documents_every_flag() {
    let out = stormsurge(&["evaluate", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--model", "--gp-model", "--data", "--out", "--column", "--seed"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn missing_dataset_reports_an_io_category() {
    let dir = tempfile::tempdir().unwrap();
    let out = stormsurge(&[
        "train",
        "--data",
        path(&dir.path().join("nope")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_category(&out), "io");
}

#[test]
fn future_config_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, r#"{"format_version": 99}"#).unwrap();
    let out = stormsurge(&["generate", "--config", path(&cfg), "--out", path(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_category(&out), "version");
}

#[test]
fn gradcheck_passes_for_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = stormsurge(&["gradcheck", "--seed", "3", "--seeds", "1", "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 12);
    assert!(!text.contains("FAIL"));
    assert!(dir.path().join("gradcheck.json").exists());
}

#[test]
fn generate_train_predict_evaluate_round() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let gen = GeneratorConfig {
        n_storms: 6,
        n_test: 2,
        n_steps: 12,
        landfall_step: 9,
        grid: GridSpec {
            grid_h: 8,
            grid_w: 8,
            ..GridSpec::desk()
        },
        ..GeneratorConfig::desk()
    };
    write_config(&root.join("gen.json"), &gen).unwrap();
    let train = TrainConfig {
        epochs: 3,
        batch_size: 2,
        ..TrainConfig::desk()
    };
    write_config(&root.join("train.json"), &train).unwrap();
    let (data, model_dir, pred_dir, eval_dir) = (
        root.join("data"),
        root.join("model"),
        root.join("pred"),
        root.join("eval"),
    );

    let out = stormsurge(&[
        "generate",
        "--config",
        path(&root.join("gen.json")),
        "--out",
        path(&data),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(data.join("storm_0000_inputs.csv").exists());

    let train_cfg = root.join("train.json");
    let out = stormsurge(&[
        "train",
        "--config",
        path(&train_cfg),
        "--data",
        path(&data),
        "--out",
        path(&model_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let history = std::fs::read_to_string(model_dir.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let model = model_dir.join("model.json");
    let out = stormsurge(&[
        "predict",
        "--model",
        path(&model),
        "--data",
        path(&data),
        "--out",
        path(&pred_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_dir(&pred_dir).unwrap().count(), 2);

    let out = stormsurge(&[
        "evaluate",
        "--model",
        path(&model),
        "--data",
        path(&data),
        "--out",
        path(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("CRNN") && table.contains("GP"), "{table}");
    for f in ["report.txt", "report.csv", "report.json"] {
        assert!(eval_dir.join(f).exists(), "{f} not written");
    }

    let out = stormsurge(&[
        "predict",
        "--model",
        path(&root.join("missing.json")),
        "--data",
        path(&data),
        "--out",
        path(&pred_dir),
    ]);
    assert_eq!(error_category(&out), "io");
}
