//! Versioned binary container for named tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "ESUMCKPT"
//! version      u32
//! header_len   u64, then header_len bytes of UTF-8 JSON (CheckpointHeader)
//! count        u64
//! per tensor:  name_len u32, name bytes, ndim u32, ndim × u64 dims,
//!              prod(dims) × f64 raw values
//! ```
//!
//! Values are stored as raw 64-bit IEEE floats, so an f64 store round-trips
//! bit-exactly. Writes go to a temporary sibling file that is renamed into
//! place, so an interrupted write never leaves a loadable partial file.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::ParamStore;
use crate::Scalar;

pub const MAGIC: &[u8; 8] = b"ESUMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint kind is `{found}`, expected `{expected}`")]
    Kind { expected: String, found: String },
    #[error("vocabulary hash mismatch: checkpoint has {found}, corpus has {expected}")]
    StaleVocabulary { expected: String, found: String },
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// What the container holds, e.g. `graph-embeddings` or `model`.
    pub kind: String,
    pub model_config: serde_json::Value,
    pub vocab_hash: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn from_array<T: Scalar>(name: &str, a: &Array2<T>) -> Self {
        Self {
            name: name.to_string(),
            shape: a.shape().to_vec(),
            values: a.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_array<T: Scalar>(&self) -> Result<Array2<T>, CheckpointError> {
        let dims = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            _ => {
                return Err(CheckpointError::Malformed(format!(
                    "tensor `{}` is not two-dimensional",
                    self.name
                )))
            }
        };
        Array2::from_shape_vec(dims, self.values.iter().map(|&v| T::of(v)).collect())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, model_config: serde_json::Value, vocab_hash: &str) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: kind.to_string(),
                model_config,
                vocab_hash: vocab_hash.to_string(),
                metadata: serde_json::Value::Null,
            },
            tensors: Vec::new(),
        }
    }

    /// Adds every parameter of `store`, or only the trainable ones.
    pub fn push_params<T: Scalar>(&mut self, store: &ParamStore<T>, trainable_only: bool) {
        for (_, p) in store.iter() {
            if p.trainable || !trainable_only {
                self.tensors.push(NamedTensor::from_array(&p.name, &p.value));
            }
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Copies every tensor whose name exists in `store` into it, checking shapes.
    pub fn restore_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<usize, CheckpointError> {
        let mut restored = 0;
        for t in &self.tensors {
            if let Ok(id) = store.id(&t.name) {
                let expected = store.value(id).shape().to_vec();
                if expected != t.shape {
                    return Err(CheckpointError::TensorShape {
                        name: t.name.clone(),
                        expected,
                        found: t.shape.clone(),
                    });
                }
                store
                    .set_value(id, t.to_array()?)
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
                restored += 1;
            }
        }
        Ok(restored)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.header.kind != kind {
            return Err(CheckpointError::Kind {
                expected: kind.to_string(),
                found: self.header.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn expect_vocab(&self, vocab_hash: &str) -> Result<(), CheckpointError> {
        if self.header.vocab_hash != vocab_hash {
            return Err(CheckpointError::StaleVocabulary {
                expected: vocab_hash.to_string(),
                found: self.header.vocab_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(
            32 + header.len() + self.tensors.iter().map(|t| 64 + 8 * t.values.len()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = read_len(&mut r)?;
        let header_bytes = take(&mut r, header_len)?;
        let header: CheckpointHeader =
            serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let count = read_len(&mut r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_len(&mut r)?);
            }
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > r.len()) {
                return Err(CheckpointError::Malformed(format!("tensor `{name}` is truncated")));
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                values.push(f64::from_bits(u64::from_le_bytes(b)));
            }
            tensors.push(NamedTensor { name, shape, values });
        }
        if !r.is_empty() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Self { header, tensors })
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| CheckpointError::Malformed(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.partial", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(bytes).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Malformed("unexpected end of data".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len(r: &mut &[u8]) -> Result<usize, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| CheckpointError::Malformed("length overflow".into()))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if n > r.len() {
        return Err(CheckpointError::Malformed("unexpected end of data".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
