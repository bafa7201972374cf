//! Model file: one JSON header line, then the query table and the document
//! table as little-endian `f32`, row-major.
//!
//! ```text
//! {"format":"ecorag-encoder-v1","dim":64,"bucket_count":65536,"hash_seed":0,"pooling":"mean"}\n
//! <bucket_count * dim f32>   query table
//! <bucket_count * dim f32>   document table
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{EncoderModel, Side};

pub const ENCODER_FORMAT: &str = "ecorag-encoder-v1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported model format \"{found}\" (expected \"{expected}\")")]
    Version { found: String, expected: &'static str },
    #[error("corrupted model file: {0}")]
    Corrupt(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    dim: usize,
    bucket_count: usize,
    hash_seed: u64,
    #[serde(default = "mean")]
    pooling: String,
}

fn mean() -> String {
    "mean".into()
}

/// Splits `bytes` at the first newline and parses the JSON header before it.
pub(crate) fn split_header<T: serde::de::DeserializeOwned>(
    bytes: &[u8],
) -> Result<(T, &[u8]), ModelFileError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ModelFileError::Corrupt("missing header line".into()))?;
    let header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| ModelFileError::Corrupt(format!("bad header: {e}")))?;
    Ok((header, &bytes[nl + 1..]))
}

pub(crate) fn check_format(bytes: &[u8], expected: &'static str) -> Result<(), ModelFileError> {
    #[derive(Deserialize)]
    struct Tag {
        format: Option<String>,
    }
    let (tag, _) = split_header::<Tag>(bytes)?;
    match tag.format {
        Some(f) if f == expected => Ok(()),
        Some(found) => Err(ModelFileError::Version { found, expected }),
        None => Err(ModelFileError::Corrupt("header has no format tag".into())),
    }
}

pub(crate) fn read_f32s(payload: &[u8], expected: usize) -> Result<Vec<f64>, ModelFileError> {
    if payload.len() != expected * 4 {
        return Err(ModelFileError::Corrupt(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            expected * 4
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ModelFileError::Corrupt("non-finite weight".into()));
    }
    Ok(values)
}

pub(crate) fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

pub fn encode_model(model: &EncoderModel) -> Vec<u8> {
    let header = Header {
        format: ENCODER_FORMAT.into(),
        dim: model.dim(),
        bucket_count: model.bucket_count(),
        hash_seed: model.hash_seed(),
        pooling: mean(),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    buf.reserve(8 * model.dim() * model.bucket_count());
    push_f32s(&mut buf, model.table(Side::Query));
    push_f32s(&mut buf, model.table(Side::Doc));
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<EncoderModel, ModelFileError> {
    check_format(bytes, ENCODER_FORMAT)?;
    let (h, payload) = split_header::<Header>(bytes)?;
    if h.pooling != "mean" {
        return Err(ModelFileError::Corrupt(format!("unknown pooling \"{}\"", h.pooling)));
    }
    let n = h
        .dim
        .checked_mul(h.bucket_count)
        .filter(|&n| n > 0)
        .ok_or_else(|| ModelFileError::Corrupt("invalid table shape".into()))?;
    let all = read_f32s(payload, 2 * n)?;
    let (q, d) = all.split_at(n);
    Ok(EncoderModel::from_tables(
        h.dim,
        h.bucket_count,
        h.hash_seed,
        q.to_vec(),
        d.to_vec(),
    ))
}

/// Writes atomically; an interrupted save never leaves a partial file.
pub fn save_model(model: &EncoderModel, path: &Path) -> Result<(), ModelFileError> {
    crate::io::write_atomic(path, &encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EncoderModel, ModelFileError> {
    decode_model(&std::fs::read(path)?)
}
