//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ATRB" | u32 version | u64 header_len | header JSON | f64 payload...
//! ```
//!
//! The header carries the model config, training metadata, the vocabulary
//! and a `{name, shape, offset}` table; `offset` is the byte offset of each
//! tensor within the payload, which stores tensors back to back in header
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::train::{EpochLog, Hyper};
use super::{ModelConfig, Parameters};
use crate::data::Vocabulary;
use crate::tensor::Tensor;
use crate::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATRB";
pub const CHECKPOINT_VERSION: u32 = 1;

const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unknown checkpoint version {0} (this build reads version {CHECKPOINT_VERSION})")]
    UnknownVersion(u32),
    #[error("truncated checkpoint: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} unexpected trailing bytes after the tensor payload")]
    TrailingBytes(usize),
    #[error("malformed checkpoint header: {0}")]
    Malformed(String),
    #[error("tensor `{name}` has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Epochs requested.
    pub epochs: usize,
    /// Epoch whose weights were kept (0 = initialization).
    pub best_epoch: usize,
    pub dev_accuracy: f64,
    pub hyper: Hyper,
    pub history: Vec<EpochLog>,
}

impl Default for TrainingMetadata {
    fn default() -> Self {
        Self {
            epochs: 0,
            best_epoch: 0,
            dev_accuracy: 0.0,
            hyper: Hyper::default(),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Parameters,
    pub vocab: Vocabulary,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: TrainingMetadata,
    vocab_hash: String,
    vocab: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn need(bytes: &[u8], needed: usize) -> Result<(), CheckpointError> {
    if bytes.len() < needed {
        return Err(CheckpointError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(params: Parameters, vocab: Vocabulary, metadata: TrainingMetadata) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            params,
            vocab,
            metadata,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn vocab_hash(&self) -> String {
        self.vocab.content_hash()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let layout = Parameters::layout(self.config());
        let mut offset = 0u64;
        let tensors = layout
            .into_iter()
            .map(|(name, shape)| {
                let entry = TensorEntry {
                    name,
                    offset,
                    shape: shape.clone(),
                };
                offset += 8 * shape.iter().product::<usize>() as u64;
                entry
            })
            .collect();
        let header = Header {
            config: self.config().clone(),
            metadata: self.metadata.clone(),
            vocab_hash: self.vocab_hash(),
            vocab: self.vocab.to_json_value(),
            tensors,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        need(bytes, 4)?;
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        need(bytes, 8)?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnknownVersion(version));
        }
        need(bytes, PREAMBLE)?;
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| l.checked_add(PREAMBLE))
            .ok_or_else(|| CheckpointError::Malformed("header length overflows".into()))?;
        need(bytes, header_end)?;
        let header: Header =
            serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let config = header.config;
        config.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let vocab = Vocabulary::from_json_value(header.vocab).map_err(CheckpointError::Malformed)?;
        if vocab.content_hash() != header.vocab_hash {
            return Err(CheckpointError::Malformed("vocabulary hash mismatch".into()));
        }
        if vocab.len() != config.vocab_size {
            return Err(CheckpointError::Malformed(format!(
                "vocabulary has {} entries, config.vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }

        let layout = Parameters::layout(&config);
        if layout.len() != header.tensors.len() {
            return Err(CheckpointError::Malformed(format!(
                "expected {} tensors, header lists {}",
                layout.len(),
                header.tensors.len()
            )));
        }
        let payload = &bytes[header_end..];
        let mut expected_offset = 0usize;
        let mut tensors = Vec::with_capacity(layout.len());
        for ((name, shape), entry) in layout.into_iter().zip(&header.tensors) {
            if entry.name != name {
                return Err(CheckpointError::Malformed(format!(
                    "expected tensor `{name}`, found `{}`",
                    entry.name
                )));
            }
            if entry.shape != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: entry.shape.clone(),
                });
            }
            if entry.offset != expected_offset as u64 {
                return Err(CheckpointError::Malformed(format!("tensor `{name}` has offset {}", entry.offset)));
            }
            let n: usize = shape.iter().product();
            let end = expected_offset + 8 * n;
            if payload.len() < end {
                return Err(CheckpointError::Truncated {
                    needed: header_end + end,
                    available: bytes.len(),
                });
            }
            let data: Vec<f64> = payload[expected_offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::NonFinite(name));
            }
            tensors.push(Tensor::new(shape, data).expect("validated shape"));
            expected_offset = end;
        }
        if payload.len() > expected_offset {
            return Err(CheckpointError::TrailingBytes(payload.len() - expected_offset));
        }
        Ok(Self {
            version,
            params: Parameters::from_tensors(&config, tensors),
            vocab,
            metadata: header.metadata,
        })
    }

    /// Writes atomically (temp file + rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
