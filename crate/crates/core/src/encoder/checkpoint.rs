//! Checkpoint file layout:
//!
//! ```text
//! b"HUMCKPT1" | u64 LE header length | header JSON | tensor data
//! ```
//!
//! The header echoes the encoder config, the vocabulary hash, the training
//! step and the ordered tensor list; tensor data follows in that order as
//! little-endian floats of the declared dtype.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HUMCKPT1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: EncoderConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub dtype: Dtype,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: EncoderParams,
}

fn encode_bytes(params: &EncoderParams, vocab_hash: &str, step: u64, dtype: Dtype) -> Vec<u8> {
    let tensors = params.weights.tensors();
    let header = CheckpointHeader {
        config: params.config.clone(),
        vocab_hash: vocab_hash.to_string(),
        step,
        dtype,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + params.weights.num_scalars() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for &x in t.iter() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    out
}

/// Writes to a sibling temporary file and renames it into place, so a
/// reader never observes a partially written checkpoint.
pub fn save_checkpoint(params: &EncoderParams, vocab_hash: &str, step: u64, dtype: Dtype, path: &Path) -> Result<()> {
    let bytes = encode_bytes(params, vocab_hash, step, dtype);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn decode(bytes: &[u8], expected_vocab: Option<&str>) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if let Some(expect) = expected_vocab {
        if header.vocab_hash != expect {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint {}, vocabulary {}",
                header.vocab_hash, expect
            )));
        }
    }
    let mut params = init_params(&EncoderConfig {
        init_scale: 0.0,
        ..header.config.clone()
    })?;
    let width = header.dtype.width();
    let mut data = &bytes[16 + hlen..];
    {
        let tensors = params.weights.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(bad("tensor list does not match the config"));
        }
        let needed: usize = tensors.iter().map(|(_, t)| t.len() * width).sum();
        if data.len() != needed {
            return Err(Error::Checkpoint(format!(
                "expected {needed} bytes of tensor data, found {}",
                data.len()
            )));
        }
        for ((name, mut t), entry) in tensors.into_iter().zip(&header.tensors) {
            if name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!("unexpected tensor {}", entry.name)));
            }
            for x in t.iter_mut() {
                let (head, rest) = data.split_at(width);
                *x = match header.dtype {
                    Dtype::F32 => f64::from(f32::from_le_bytes(head.try_into().expect("4 bytes"))),
                    Dtype::F64 => f64::from_le_bytes(head.try_into().expect("8 bytes")),
                };
                data = rest;
            }
        }
    }
    params.config = header.config.clone();
    Ok(Checkpoint { header, params })
}

/// Reads a checkpoint; when `expected_vocab` is given the stored vocabulary
/// hash must match it.
pub fn load_checkpoint(path: &Path, expected_vocab: Option<&str>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected_vocab)
}
