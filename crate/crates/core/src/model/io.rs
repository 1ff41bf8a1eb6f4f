//! Parameter files.
//!
//! A parameter file is a single JSON object:
//!
//! ```text
//! {
//!   "format": "stormsurge-crnn-params",
//!   "format_version": 1,
//!   "architecture": { ...ArchitectureConfig fields... },
//!   "preprocessing": null | { "standardization": {...}, "labels": {...} },
//!   "tensors": [ { "name": "dense.0.weight", "shape": [4, 40], "data": [...] }, ... ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! round-tripping, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, ModelParams};
use crate::docio;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::Preprocessing;

pub const PARAMS_FORMAT: &str = "stormsurge-crnn-params";
pub const PARAMS_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsDoc {
    format: String,
    format_version: u64,
    architecture: ArchitectureConfig,
    #[serde(default)]
    preprocessing: Option<Preprocessing>,
    tensors: Vec<NamedTensor>,
}

/// Contents of a parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub architecture: ArchitectureConfig,
    pub params: ModelParams,
    pub preprocessing: Option<Preprocessing>,
}

pub fn save_params(
    path: &Path,
    cfg: &ArchitectureConfig,
    params: &ModelParams,
    preprocessing: Option<&Preprocessing>,
) -> Result<()> {
    params.check_shapes(cfg)?;
    let tensors = params
        .named_tensors(cfg)?
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        })
        .collect();
    let doc = ParamsDoc {
        format: PARAMS_FORMAT.to_string(),
        format_version: PARAMS_FORMAT_VERSION,
        architecture: cfg.clone(),
        preprocessing: preprocessing.cloned(),
        tensors,
    };
    docio::write_document(path, &doc, false)
}

pub fn load_params(path: &Path) -> Result<SavedModel> {
    let value = docio::read_value(path)?;
    docio::check_header(path, &value, Some(PARAMS_FORMAT), PARAMS_FORMAT_VERSION)?;
    let doc: ParamsDoc = docio::decode(path, value)?;
    doc.architecture.validate()?;
    let mut tensors = Vec::with_capacity(doc.tensors.len());
    for nt in doc.tensors {
        let expected: usize = nt.shape.iter().product();
        if nt.shape.is_empty() || expected != nt.data.len() {
            return Err(Error::ShapeMismatch {
                name: nt.name,
                expected: vec![nt.data.len()],
                found: nt.shape,
            });
        }
        let t = Tensor::new(nt.shape.clone(), nt.data).map_err(|_| Error::ShapeMismatch {
            name: nt.name.clone(),
            expected: vec![],
            found: nt.shape,
        })?;
        tensors.push((nt.name, t));
    }
    let params = ModelParams::from_tensors(&doc.architecture, tensors)?;
    Ok(SavedModel {
        architecture: doc.architecture,
        params,
        preprocessing: doc.preprocessing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn saved(dir: &Path) -> (std::path::PathBuf, ArchitectureConfig, ModelParams) {
        let cfg = ArchitectureConfig::tiny(2);
        let params = ModelParams::init(&cfg, 17).unwrap();
        let path = dir.join("params.json");
        save_params(&path, &cfg, &params, None).unwrap();
        (path, cfg, params)
    }

    fn edit(path: &Path, f: impl FnOnce(&mut Value)) {
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        f(&mut v);
        std::fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (path, cfg, params) = saved(dir.path());
        let loaded = load_params(&path).unwrap();
        assert_eq!(loaded.architecture, cfg);
        for (a, b) in loaded.params.tensors().iter().zip(params.tensors()) {
            assert!(a.bit_eq(b));
        }
    }

    #[test]
    fn corrupted_shape_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (path, ..) = saved(dir.path());
        edit(&path, |v| v["tensors"][2]["shape"] = serde_json::json!([3, 7]));
        assert!(matches!(load_params(&path), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn shape_disagreeing_with_architecture_is_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (path, ..) = saved(dir.path());
        // consistent data length, wrong layout for the architecture
        edit(&path, |v| {
            let shape = v["tensors"][0]["shape"].clone();
            let (a, b) = (shape[0].as_u64().unwrap(), shape[1].as_u64().unwrap());
            v["tensors"][0]["shape"] = serde_json::json!([b, a]);
        });
        assert!(matches!(load_params(&path), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (path, ..) = saved(dir.path());
        edit(&path, |v| {
            v["format_version"] = serde_json::json!(PARAMS_FORMAT_VERSION + 1)
        });
        assert!(matches!(load_params(&path), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn garbage_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_params(&path), Err(Error::Malformed { .. })));
    }
}
