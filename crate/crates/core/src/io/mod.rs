//! Model files, plan/report JSON and dataset ingestion.

mod dataset;
mod model;

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use dataset::{
    load_dataset, load_raw, parse_idx, DatasetSource, IdxArray, Normalization, MNIST_TEST, MNIST_TRAIN,
};
pub use model::{
    decode_model, encode_model, load_model, load_model_file, read_header, save_model, save_model_file, ModelFile,
    ModelHeader, TensorEntry, FORMAT_VERSION, MAGIC,
};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline, written atomically.
pub fn save_json<V: Serialize>(value: &V, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        message: format!("line {}, column {}: {e}", e.line(), e.column()),
    })
}
