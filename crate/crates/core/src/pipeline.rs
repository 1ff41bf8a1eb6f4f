//! End-to-end steps shared by the command-line tool and the integration
//! tests: data preparation, CRNN and GP training, prediction and evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::docio;
use crate::error::{Error, Result};
use crate::eval::{self, EmulatorScores, EvalReport};
use crate::gp::{GpConfig, GpEmulator};
use crate::model::{save_params, ArchitectureConfig, Crnn, SavedModel};
use crate::storm_data::{stack_records, synchronize_landfall, Dataset, StormRecord};
use crate::tensor::Tensor;
use crate::training::{train_with, Preprocessing, TrainConfig, TrainOutcome, TrainingData};

pub const MODEL_FILE: &str = "model.json";
pub const BEST_MODEL_FILE: &str = "best_model.json";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const GP_MODEL_FILE: &str = "gp_model.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_JSON_FILE: &str = "report.json";

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Records of `ids`, shifted so landfall sits on the dataset's common step.
fn aligned(dataset: &Dataset, ids: &[usize]) -> Result<Vec<StormRecord>> {
    let target = dataset.manifest.landfall_step;
    ids.iter()
        .map(|&i| {
            let r = &dataset.records[i];
            if r.landfall_step == target {
                Ok(r.clone())
            } else {
                synchronize_landfall(r, target)
            }
        })
        .collect()
}

pub fn train_split(dataset: &Dataset) -> Result<Vec<StormRecord>> {
    aligned(dataset, &dataset.manifest.train)
}

pub fn test_split(dataset: &Dataset) -> Result<Vec<StormRecord>> {
    aligned(dataset, &dataset.manifest.test)
}

/// The full layer stack sized to the dataset's grid and sequence length.
pub fn architecture_for(dataset: &Dataset) -> ArchitectureConfig {
    let g = &dataset.manifest.grid;
    ArchitectureConfig::with_grid(g.grid_h, g.grid_w, dataset.manifest.n_steps)
}

/// Preprocessing fitted on `train` and the transformed training tensors.
pub fn prepare(train: &[StormRecord]) -> Result<(Preprocessing, TrainingData)> {
    let (x, y) = stack_records(train)?;
    let pre = Preprocessing::fit(&x, &y)?;
    let data = TrainingData::new(pre.inputs(&x)?, pre.labels(&y))?;
    Ok((pre, data))
}

#[derive(Debug)]
pub struct TrainRun {
    pub outcome: TrainOutcome,
    pub model: SavedModel,
}

/// Trains a CRNN on the training split and writes [`MODEL_FILE`] (final
/// parameters), [`BEST_MODEL_FILE`], [`HISTORY_FILE`] and any checkpoints
/// under `out`. Parameters are initialised from `cfg.seed`.
pub fn train_crnn(
    dataset: &Dataset,
    arch: &ArchitectureConfig,
    cfg: &TrainConfig,
    out: &Path,
    mut log: impl FnMut(&str),
) -> Result<TrainRun> {
    let (pre, data) = prepare(&train_split(dataset)?)?;
    let mut model = Crnn::init(arch.clone(), cfg.seed)?;
    let outcome = train_with(&mut model, &data, cfg, |r| {
        if r.log_due {
            log(&format!("epoch {:>6}  loss {:.6e}", r.epoch, r.mean_loss));
        }
        if r.checkpoint_due {
            let path = out.join("checkpoints").join(format!("epoch_{:06}.json", r.epoch));
            save_params(&path, arch, r.params, Some(&pre))?;
        }
        Ok(())
    })?;
    save_params(&out.join(MODEL_FILE), arch, model.params(), Some(&pre))?;
    save_params(&out.join(BEST_MODEL_FILE), arch, &outcome.best_params, Some(&pre))?;
    write_text(&out.join(HISTORY_FILE), &outcome.history_csv())?;
    Ok(TrainRun {
        model: SavedModel {
            architecture: arch.clone(),
            params: model.into_params(),
            preprocessing: Some(pre),
        },
        outcome,
    })
}

/// Fits the GP emulator on the training split; writes [`GP_MODEL_FILE`]
/// under `out` when given.
pub fn train_gp(dataset: &Dataset, cfg: &GpConfig, out: Option<&Path>) -> Result<GpEmulator> {
    let gp = GpEmulator::fit(&train_split(dataset)?, cfg)?;
    if let Some(dir) = out {
        gp.save(&dir.join(GP_MODEL_FILE))?;
    }
    Ok(gp)
}

/// Surge predictions in metres, one `[T, n_sp]` tensor per record.
pub fn predict_crnn(saved: &SavedModel, records: &[StormRecord]) -> Result<Vec<Tensor>> {
    let pre = saved
        .preprocessing
        .as_ref()
        .ok_or_else(|| Error::Config("model file carries no preprocessing statistics".into()))?;
    let model = Crnn::new(saved.architecture.clone(), saved.params.clone())?;
    let (x, _) = stack_records(records)?;
    let pred = pre.restore_labels(&model.predict(&pre.inputs(&x)?)?);
    Ok((0..records.len()).map(|i| pred.index_axis0(i)).collect())
}

pub fn predict_gp(gp: &GpEmulator, records: &[StormRecord]) -> Result<Vec<Tensor>> {
    records.iter().map(|r| gp.predict(r)).collect()
}

/// `[T, n_sp]` surge as CSV, one row per step.
pub fn surge_csv(field: &Tensor) -> String {
    let n_sp = field.shape()[1];
    let mut out = String::from("step");
    for s in 0..n_sp {
        write!(out, ",sp_{s}").unwrap();
    }
    out.push('\n');
    for (t, row) in field.data().chunks_exact(n_sp).enumerate() {
        write!(out, "{t}").unwrap();
        for v in row {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `storm_<id>_<name>.csv` for every record id and returns the paths.
pub fn write_predictions(out: &Path, ids: &[usize], name: &str, fields: &[Tensor]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::with_capacity(ids.len());
    for (id, f) in ids.iter().zip(fields) {
        let path = out.join(format!("storm_{id:04}_{name}.csv"));
        write_text(&path, &surge_csv(f))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Scores both emulators on the test split and writes the report table,
/// CSV and JSON plus scatter and front/middle/back time-series plots at
/// save-point `column` under `out`.
pub fn evaluate(
    dataset: &Dataset,
    crnn: &SavedModel,
    gp: &GpEmulator,
    column: usize,
    out: &Path,
) -> Result<EvalReport> {
    let test = test_split(dataset)?;
    let ids = dataset.manifest.test.clone();
    let crnn_pred = predict_crnn(crnn, &test)?;
    let gp_pred = predict_gp(gp, &test)?;
    let score = |preds: &[Tensor]| -> Result<Vec<f64>> {
        preds.iter().zip(&test).map(|(p, r)| eval::rmse(p, &r.labels)).collect()
    };
    let emulators = vec![
        EmulatorScores {
            name: "CRNN".into(),
            rmse: score(&crnn_pred)?,
        },
        EmulatorScores {
            name: "GP".into(),
            rmse: score(&gp_pred)?,
        },
    ];

    let mut files = Vec::new();
    let truth_all = Tensor::stack(&test.iter().map(|r| r.labels.clone()).collect::<Vec<_>>())?;
    for (name, preds) in [("crnn", &crnn_pred), ("gp", &gp_pred)] {
        let stacked = Tensor::stack(preds)?;
        files.extend(eval::export_scatter(
            &stacked,
            &truth_all,
            &out.join(format!("scatter_{name}")),
            &format!("{} prediction vs. true surge, test storms", name.to_uppercase()),
        )?);
    }
    let layers = eval::layer_save_points(&dataset.manifest.grid, column)?;
    for (k, r) in test.iter().enumerate() {
        for (layer, sp) in layers {
            let stem = out.join("timeseries").join(format!("test_{}_{layer}", k + 1));
            let title = format!("Test {} ({layer} layer, save point {sp})", k + 1);
            files.extend(eval::export_timeseries(
                &r.labels,
                &crnn_pred[k],
                &gp_pred[k],
                sp,
                &stem,
                &title,
            )?);
        }
    }
    let artifacts = files
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/"))
        .collect();
    let report = EvalReport {
        storms: ids,
        emulators,
        artifacts,
    };
    write_text(&out.join(REPORT_TABLE_FILE), &report.to_table())?;
    write_text(&out.join(REPORT_CSV_FILE), &report.to_csv())?;
    docio::write_document(&out.join(REPORT_JSON_FILE), &report, true)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelParams;
    use crate::storm_data::{generate_dataset, read_dataset, write_dataset, GeneratorConfig, GridSpec};

    fn small_dataset(dir: &Path) -> Dataset {
        let cfg = GeneratorConfig {
            n_storms: 10,
            n_test: 2,
            n_steps: 6,
            landfall_step: 4,
            grid: GridSpec {
                grid_h: 8,
                grid_w: 8,
                ..GridSpec::desk()
            },
            ..GeneratorConfig::desk()
        };
        let records = generate_dataset(&cfg).unwrap();
        write_dataset(dir, &records, &cfg.grid, Some(&cfg), cfg.n_test).unwrap();
        read_dataset(dir).unwrap()
    }

    #[test]
    fn train_and_evaluate_write_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = small_dataset(&tmp.path().join("data"));
        let arch = ArchitectureConfig::with_grid(8, 8, 6);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            checkpoint_every: 1,
            ..TrainConfig::desk()
        };
        let out = tmp.path().join("run");
        let run = train_crnn(&ds, &arch, &cfg, &out, |_| {}).unwrap();
        assert_eq!(run.outcome.history.len(), 2);
        for f in [
            MODEL_FILE,
            BEST_MODEL_FILE,
            HISTORY_FILE,
            "checkpoints/epoch_000002.json",
        ] {
            assert!(out.join(f).is_file(), "{f}");
        }
        let gp_cfg = GpConfig {
            kernel: Some(KernelParams::isotropic(1e-3, 5.0, 1e-6, 12)),
            optimize: false,
            ..GpConfig::default()
        };
        let gp = train_gp(&ds, &gp_cfg, Some(&out)).unwrap();
        assert!(out.join(GP_MODEL_FILE).is_file());
        let report = evaluate(&ds, &run.model, &gp, 4, &out.join("eval")).unwrap();
        assert_eq!(report.storms, vec![8, 9]);
        assert_eq!(report.emulators.len(), 2);
        // 2 scatter pairs + 2 storms × 3 layers × (csv, svg)
        assert_eq!(report.artifacts.len(), 4 + 12);
        for a in &report.artifacts {
            assert!(out.join("eval").join(a).is_file(), "{a}");
        }
        let table = fs::read_to_string(out.join("eval").join(REPORT_TABLE_FILE)).unwrap();
        assert!(table.contains("Test 2"));
    }

    #[test]
    fn surge_csv_layout() {
        let f = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let text = surge_csv(&f);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,sp_0,sp_1,sp_2");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,3.0000000000000000e0,"));
    }
}
