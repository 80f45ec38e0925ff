//! JSON header + raw little-endian array storage shared by volumes and images.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type of a raw data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub(crate) fn parse_dtype(path: &Path, s: &str) -> Result<Dtype> {
    match s {
        "f32" => Ok(Dtype::F32),
        "f64" => Ok(Dtype::F64),
        other => Err(Error::format(path, format!("unknown dtype `{other}` (expected f32 or f64)"))),
    }
}

pub(crate) fn dtype_name(d: Dtype) -> &'static str {
    match d {
        Dtype::F32 => "f32",
        Dtype::F64 => "f64",
    }
}

pub(crate) fn check_byte_order(path: &Path, s: &str) -> Result<()> {
    if s != "little" {
        return Err(Error::format(path, format!("unsupported byte_order `{s}`")));
    }
    Ok(())
}

/// Resolves a data file name relative to the directory holding its header.
pub(crate) fn sibling(header: &Path, name: &str) -> PathBuf {
    match header.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

/// Default raw file name for a header path: `foo.json` -> `foo.raw`.
pub(crate) fn raw_name(header: &Path, suffix: &str) -> Result<String> {
    let stem = header
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(header, "header path has no file name"))?;
    Ok(format!("{stem}{suffix}.raw"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_raw(path: &Path, dtype: Dtype, len: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (len * dtype.size()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value at element {index}"),
        ));
    }
    Ok(data)
}

pub(crate) fn write_raw(path: &Path, dtype: Dtype, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * dtype.size());
    match dtype {
        Dtype::F32 => data
            .iter()
            .for_each(|v| bytes.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => data
            .iter()
            .for_each(|v| bytes.extend_from_slice(&v.to_le_bytes())),
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
