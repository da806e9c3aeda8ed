//! Named-tensor container used for parameter checkpoints and prepared data.
//!
//! Layout (UTF-8 JSON, one object):
//!
//! ```text
//! {
//!   "format": "fairst-tensors",
//!   "version": 1,
//!   "meta": { ...free-form, owner-defined... },
//!   "tensors": [ { "name": "...", "shape": [d0, d1, ...], "values": [row-major f64...] }, ... ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const FORMAT: &str = "fairst-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub format: String,
    pub version: u32,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        });
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        let nt = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("tensor '{name}' missing from container")))?;
        Tensor::new(nt.shape.clone(), nt.values.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TensorFile = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("tensor container: {e}")))?;
        if f.format != FORMAT {
            return Err(Error::invalid(format!(
                "unknown container format '{}'",
                f.format
            )));
        }
        if f.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported container version {}",
                f.version
            )));
        }
        for t in &f.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::invalid(format!(
                    "tensor '{}' shape/value count mismatch",
                    t.name
                )));
            }
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
