//! Model container: a JSON header followed by raw little-endian f32 tensors.
//!
//! ```text
//! offset 0   8 bytes   magic "BASISNET"
//! offset 8   u64 LE    header length H
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          payload: tensors in manifest order, f32 LE
//! ```
//!
//! Manifest offsets are relative to the payload start, contiguous and in
//! layer order; each layer contributes its parameters in
//! [`LayerSpec::param_shapes`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Normalization;
use super::write_atomic;
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BASISNET";
pub const FORMAT_VERSION: u64 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u64,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

/// A network together with the input normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile<T: Scalar = f64> {
    pub network: Network<T>,
    pub normalization: Option<Normalization>,
}

fn manifest(specs: &[LayerSpec]) -> Vec<TensorEntry> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        for (name, shape) in spec.param_shapes() {
            let nbytes = 4 * shape.iter().product::<usize>() as u64;
            out.push(TensorEntry {
                layer: i,
                name: name.to_string(),
                shape,
                offset,
                nbytes,
            });
            offset += nbytes;
        }
    }
    out
}

pub fn encode_model<T: Scalar>(model: &ModelFile<T>) -> Vec<u8> {
    let specs = model.network.specs();
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        input_shape: model.network.input_shape().to_vec(),
        tensors: manifest(&specs),
        layers: specs,
        normalization: model.normalization.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * model.network.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for layer in model.network.layers() {
        for t in layer.params() {
            for &v in t.data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_model<T: Scalar>(bytes: &[u8], path: &Path) -> Result<ModelFile<T>> {
    let malformed = |offset: usize, message: String| Error::MalformedHeader {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < PREAMBLE {
        return Err(malformed(bytes.len(), format!("file is {} bytes, shorter than the preamble", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(malformed(0, "bad magic, not a model file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| malformed(8, format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let json = &bytes[PREAMBLE..header_end];

    let value: serde_json::Value = serde_json::from_slice(json)
        .map_err(|e| malformed(PREAMBLE + json_offset(json, &e), format!("invalid JSON: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        Some(found) => {
            return Err(Error::VersionMismatch {
                path: path.to_path_buf(),
                offset: PREAMBLE as u64,
                found,
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(malformed(PREAMBLE, "missing integer format_version".into())),
    }
    let header: ModelHeader =
        serde_json::from_value(value).map_err(|e| malformed(PREAMBLE, format!("bad header: {e}")))?;

    let expected = manifest(&header.layers);
    if header.tensors != expected {
        let at = header
            .tensors
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .unwrap_or(header.tensors.len().min(expected.len()));
        return Err(malformed(
            PREAMBLE,
            format!("tensor manifest entry {at} does not match the layer specs"),
        ));
    }

    let payload = &bytes[header_end..];
    let need: u64 = expected.iter().map(|e| e.nbytes).sum();
    if (payload.len() as u64) < need {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            expected: need,
            found: payload.len() as u64,
        });
    }
    if payload.len() as u64 > need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: header_end as u64 + need,
            message: format!("{} trailing bytes after payload", payload.len() as u64 - need),
        });
    }

    let mut entries = expected.iter();
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        let mut params = Vec::new();
        for _ in spec.param_shapes() {
            let e = entries.next().expect("manifest matches specs");
            let raw = &payload[e.offset as usize..(e.offset + e.nbytes) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            params.push(Tensor::new(e.shape.clone(), data)?);
        }
        layers.push(Layer::from_parts(spec, params).map_err(|e| malformed(PREAMBLE, e.to_string()))?);
    }
    let network = Network::new(header.input_shape, layers).map_err(|e| malformed(PREAMBLE, e.to_string()))?;
    Ok(ModelFile {
        network,
        normalization: header.normalization,
    })
}

fn json_offset(json: &[u8], e: &serde_json::Error) -> usize {
    let (line, col) = (e.line(), e.column());
    if line == 0 {
        return 0;
    }
    let line_start: usize = json
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + col.saturating_sub(1)).min(json.len())
}

/// Reads only the JSON header of a model file.
pub fn read_header(path: &Path) -> Result<ModelHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = decode_model::<f64>(&bytes, path)?;
    let specs = model.network.specs();
    Ok(ModelHeader {
        format_version: FORMAT_VERSION,
        input_shape: model.network.input_shape().to_vec(),
        tensors: manifest(&specs),
        layers: specs,
        normalization: model.normalization,
    })
}

pub fn save_model_file<T: Scalar>(model: &ModelFile<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model))
}

pub fn load_model_file<T: Scalar>(path: &Path) -> Result<ModelFile<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

pub fn save_model<T: Scalar>(network: &Network<T>, path: &Path) -> Result<()> {
    save_model_file(
        &ModelFile {
            network: network.clone(),
            normalization: None,
        },
        path,
    )
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Network<T>> {
    Ok(load_model_file(path)?.network)
}
