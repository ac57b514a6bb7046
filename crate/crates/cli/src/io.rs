use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use vcut::numerics::{vten, Tensor};
use vcut::Scalar;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

pub fn out_dir(out: &Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
    out.clone()
        .ok_or_else(|| CliError::Argument(format!("{command} needs --out DIR")))
}

pub fn to_json<S: Serialize>(value: &S) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    fs::write(path, to_json(value)?).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv<S: Serialize>(path: &Path, rows: &[S]) -> CliResult<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path.display(), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_tensor<T: Scalar>(path: &Path) -> CliResult<Tensor<T>> {
    vten::read(path).map_err(|e| CliError::io(path.display(), e))
}

pub fn read_tensor_f64(path: &Path) -> CliResult<Tensor<f64>> {
    vten::read_any_f64(path).map_err(|e| CliError::io(path.display(), e))
}

pub fn write_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> CliResult<()> {
    vten::write(path, t).map_err(|e| CliError::io(path.display(), e))
}

/// SHA-256 over the VTEN encodings of `tensors`, in order.
pub fn digest<'a, T: Scalar + 'a>(tensors: impl IntoIterator<Item = &'a Tensor<T>>) -> CliResult<String> {
    let mut h = Sha256::new();
    for t in tensors {
        h.update(vten::encode(t)?);
    }
    Ok(hex::encode(h.finalize()))
}
