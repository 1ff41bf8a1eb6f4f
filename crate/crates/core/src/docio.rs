//! Versioned JSON documents: parameter files, GP model files, manifests and
//! configuration files all carry a `format_version` field that is checked
//! before anything else is decoded.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Wraps a configuration struct with a `format_version` key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format_version: u64,
    #[serde(flatten)]
    pub body: T,
}

pub const CONFIG_FORMAT_VERSION: u64 = 1;

fn malformed(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

pub fn read_value(path: &Path) -> Result<Value> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| malformed(path, e))
}

/// Checks `format_version` (and `format`, when `format` is given).
pub fn check_header(path: &Path, doc: &Value, format: Option<&str>, supported: u64) -> Result<()> {
    if let Some(expected) = format {
        match doc.get("format").and_then(Value::as_str) {
            Some(f) if f == expected => {}
            Some(f) => return Err(malformed(path, format!("format '{f}', expected '{expected}'"))),
            None => return Err(malformed(path, "missing 'format' field")),
        }
    }
    let found = doc
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| malformed(path, "missing or non-integer 'format_version'"))?;
    if found != supported {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found,
            supported,
        });
    }
    Ok(())
}

pub fn decode<T: DeserializeOwned>(path: &Path, doc: Value) -> Result<T> {
    serde_json::from_value(doc).map_err(|e| malformed(path, e))
}

pub fn read_document<T: DeserializeOwned>(path: &Path, format: Option<&str>, supported: u64) -> Result<T> {
    let doc = read_value(path)?;
    check_header(path, &doc, format, supported)?;
    decode(path, doc)
}

pub fn write_document<T: Serialize>(path: &Path, doc: &T, pretty: bool) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = if pretty {
        serde_json::to_writer_pretty(&mut w, doc)
    } else {
        serde_json::to_writer(&mut w, doc)
    };
    res.map_err(|e| malformed(path, e))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads a configuration file written as `{"format_version": 1, ...fields}`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_document::<Versioned<T>>(path, None, CONFIG_FORMAT_VERSION).map(|v| v.body)
}

pub fn write_config<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let doc = Versioned {
        format_version: CONFIG_FORMAT_VERSION,
        body,
    };
    write_document(path, &doc, true)
}
