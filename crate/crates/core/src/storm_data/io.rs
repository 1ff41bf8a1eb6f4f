//! Dataset directories.
//!
//! ```text
//! manifest.json
//! storm_0000_inputs.csv   header `step,lat,lon,dp,rmw`, then T rows
//! storm_0000_surge.csv    T rows of n_sp values, no header
//! ...
//! ```
//!
//! Numbers are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GeneratorConfig, GridSpec, StormRecord, N_FEATURES};
use crate::docio;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT: &str = "stormsurge-dataset";
pub const DATASET_FORMAT_VERSION: u64 = 1;
const INPUTS_HEADER: &str = "step,lat,lon,dp,rmw";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormEntry {
    pub id: usize,
    pub inputs: String,
    pub surge: String,
    pub landfall_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub format_version: u64,
    pub grid: GridSpec,
    pub n_steps: usize,
    pub landfall_step: usize,
    pub seed: Option<u64>,
    pub generator: Option<GeneratorConfig>,
    /// Positions in `storms`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub storms: Vec<StormEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<StormRecord>,
}

impl Dataset {
    pub fn train(&self) -> Vec<&StormRecord> {
        self.manifest.train.iter().map(|&i| &self.records[i]).collect()
    }

    pub fn test(&self) -> Vec<&StormRecord> {
        self.manifest.test.iter().map(|&i| &self.records[i]).collect()
    }

    pub fn train_records(&self) -> Vec<StormRecord> {
        self.train().into_iter().cloned().collect()
    }

    pub fn test_records(&self) -> Vec<StormRecord> {
        self.test().into_iter().cloned().collect()
    }
}

fn fmt_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `records` with the last `n_test` as the test split.
pub fn write_dataset(
    dir: &Path,
    records: &[StormRecord],
    grid: &GridSpec,
    generator: Option<&GeneratorConfig>,
    n_test: usize,
) -> Result<Manifest> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("cannot write an empty dataset".into()))?;
    if n_test > records.len() {
        return Err(Error::Contract(format!(
            "n_test {n_test} exceeds {} records",
            records.len()
        )));
    }
    let n_steps = first.n_steps();
    for r in records {
        if r.inputs.shape() != [n_steps, N_FEATURES] || r.labels.shape() != [n_steps, grid.n_sp()] {
            return Err(Error::Dimension(format!(
                "record shapes {:?} / {:?} do not match T={n_steps}, n_sp={}",
                r.inputs.shape(),
                r.labels.shape(),
                grid.n_sp()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut storms = Vec::with_capacity(records.len());
    for (id, r) in records.iter().enumerate() {
        let entry = StormEntry {
            id,
            inputs: format!("storm_{id:04}_inputs.csv"),
            surge: format!("storm_{id:04}_surge.csv"),
            landfall_step: r.landfall_step,
        };
        let mut text = String::from(INPUTS_HEADER);
        text.push('\n');
        for (t, row) in r.inputs.data().chunks_exact(N_FEATURES).enumerate() {
            write!(text, "{t},").expect("writing to a String");
            fmt_row(&mut text, row.iter().copied());
        }
        write_file(&dir.join(&entry.inputs), &text)?;
        let mut text = String::new();
        for row in r.labels.data().chunks_exact(grid.n_sp()) {
            fmt_row(&mut text, row.iter().copied());
        }
        write_file(&dir.join(&entry.surge), &text)?;
        storms.push(entry);
    }
    let n_train = records.len() - n_test;
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        format_version: DATASET_FORMAT_VERSION,
        grid: grid.clone(),
        n_steps,
        landfall_step: first.landfall_step,
        seed: generator.map(|g| g.seed),
        generator: generator.cloned(),
        train: (0..n_train).collect(),
        test: (n_train..records.len()).collect(),
        storms,
    };
    docio::write_document(&dir.join("manifest.json"), &manifest, true)?;
    Ok(manifest)
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `rows` comma-separated lines of `cols` numbers starting after
/// `skip` header lines.
fn parse_table(path: &Path, text: &str, skip: usize, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let lines: Vec<&str> = text.lines().skip(skip).filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows {
        return Err(Error::RowCount {
            path: path.to_path_buf(),
            expected: rows,
            found: lines.len(),
        });
    }
    let mut out = Vec::with_capacity(rows * cols);
    for (i, line) in lines.iter().enumerate() {
        let line_no = skip + i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols {
            return Err(Error::ColumnCount {
                path: path.to_path_buf(),
                line: line_no,
                expected: cols,
                found: cells.len(),
            });
        }
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                line: line_no,
                cell: cell.to_string(),
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingFile { path: manifest_path });
    }
    let manifest: Manifest = docio::read_document(&manifest_path, Some(DATASET_FORMAT), DATASET_FORMAT_VERSION)?;
    let n = manifest.storms.len();
    if let Some(&bad) = manifest.train.iter().chain(&manifest.test).find(|&&i| i >= n) {
        return Err(Error::Malformed {
            path: manifest_path,
            msg: format!("split refers to storm {bad}, only {n} listed"),
        });
    }
    let (t_len, n_sp) = (manifest.n_steps, manifest.grid.n_sp());
    let mut records = Vec::with_capacity(n);
    for entry in &manifest.storms {
        let path: PathBuf = dir.join(&entry.inputs);
        let text = read_text(&path)?;
        match text.lines().next() {
            Some(h) if h.trim() == INPUTS_HEADER => {}
            _ => {
                return Err(Error::Malformed {
                    path,
                    msg: format!("first line must be '{INPUTS_HEADER}'"),
                })
            }
        }
        let table = parse_table(&path, &text, 1, t_len, N_FEATURES + 1)?;
        let inputs: Vec<f64> = table
            .chunks_exact(N_FEATURES + 1)
            .flat_map(|row| row[1..].iter().copied())
            .collect();
        let path = dir.join(&entry.surge);
        let labels = parse_table(&path, &read_text(&path)?, 0, t_len, n_sp)?;
        records.push(StormRecord {
            inputs: Tensor::new(vec![t_len, N_FEATURES], inputs)?,
            labels: Tensor::new(vec![t_len, n_sp], labels)?,
            landfall_step: entry.landfall_step,
        });
    }
    Ok(Dataset { manifest, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storm_data::generate_dataset;

    fn cfg3() -> GeneratorConfig {
        GeneratorConfig {
            n_storms: 3,
            n_test: 1,
            ..GeneratorConfig::desk()
        }
    }

    fn written() -> (tempfile::TempDir, Vec<StormRecord>) {
        let cfg = cfg3();
        let recs = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &recs, &cfg.grid, Some(&cfg), cfg.n_test).unwrap();
        (dir, recs)
    }

    #[test]
    fn round_trip() {
        let (dir, recs) = written();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!((ds.train().len(), ds.test().len()), (2, 1));
        for (a, b) in ds.records.iter().zip(&recs) {
            assert!(a.inputs.max_abs_diff(&b.inputs) <= 1e-12);
            assert!(a.labels.max_abs_diff(&b.labels) <= 1e-12);
            assert!(a.inputs.bit_eq(&b.inputs) && a.labels.bit_eq(&b.labels));
        }
        assert_eq!(ds.manifest.generator, Some(cfg3()));
    }

    #[test]
    fn truncated_surge_is_row_count_error() {
        let (dir, _) = written();
        let path = dir.path().join("storm_0001_surge.csv");
        let text = fs::read_to_string(&path).unwrap();
        let cut: Vec<&str> = text.lines().take(10).collect();
        fs::write(&path, cut.join("\n")).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::RowCount {
                path: p,
                expected: 40,
                found: 10,
            }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_is_column_count_error() {
        let (dir, _) = written();
        let path = dir.path().join("storm_0000_inputs.csv");
        let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
        lines[1] = lines[1].replacen(",", ";", 2);
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::ColumnCount { line: 2, .. })
        ));
    }

    #[test]
    fn bad_cell_is_non_numeric_error() {
        let (dir, _) = written();
        let path = dir.path().join("storm_0002_surge.csv");
        let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
        lines[4] = lines[4].replacen("0", "x", 1);
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(Error::NonNumeric { line: 5, .. })
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let (dir, _) = written();
        let path = dir.path().join("storm_0001_inputs.csv");
        fs::remove_file(&path).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::MissingFile { path: p }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_scale_split_from_manifest() {
        // 508 tiny storms with a 500/8 split
        let grid = GridSpec {
            grid_h: 1,
            grid_w: 1,
            ..GridSpec::desk()
        };
        let rec = StormRecord {
            inputs: Tensor::ones(&[2, N_FEATURES]),
            labels: Tensor::zeros(&[2, 1]),
            landfall_step: 1,
        };
        let recs = vec![rec; 508];
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &recs, &grid, None, 8).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!((ds.train().len(), ds.test().len()), (500, 8));
    }
}
