//! Binary checkpoint container:
//!
//! ```text
//! magic "STXCKPT\0" | u32 version | u64 header length | JSON header | f64 LE tensor data
//! ```
//!
//! The header holds the model config and the name and shape of every
//! tensor, in storage order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Params, NAMES};
use super::tensor::Mat;
use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.cfg.clone(),
            tensors: self
                .params
                .tensors
                .iter()
                .zip(NAMES)
                .map(|(t, name)| TensorEntry {
                    name: name.to_string(),
                    rows: t.rows,
                    cols: t.cols,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fmt(&format!("version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.config.validate()?;
        let shapes = header.config.shapes();
        if header.tensors.len() != shapes.len() {
            return Err(fmt("tensor count does not match config"));
        }
        let mut offset = 20 + hlen;
        let mut tensors = Vec::with_capacity(shapes.len());
        for ((entry, &(rows, cols)), name) in header.tensors.iter().zip(&shapes).zip(NAMES) {
            if entry.name != name || entry.rows != rows || entry.cols != cols {
                return Err(Error::DimensionMismatch {
                    expected: rows * cols,
                    got: entry.rows * entry.cols,
                });
            }
            let n = rows * cols * 8;
            let raw = bytes.get(offset..offset + n).ok_or_else(|| fmt("truncated tensor data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Mat { rows, cols, data });
            offset += n;
        }
        if offset != bytes.len() {
            return Err(fmt("trailing bytes"));
        }
        Ok(Model::from_params(header.config, Params { tensors }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes)
    }
}
