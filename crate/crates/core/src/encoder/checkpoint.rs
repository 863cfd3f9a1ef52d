//! Binary checkpoint: a magic line, one line of JSON metadata, then every
//! tensor as little-endian f64 in layout order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ModelParams};
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const MAGIC: &str = "LMSOC-CHECKPOINT v1";

/// A trained model with everything needed to encode queries for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    /// Dimension of the context vectors a SOC model was trained with.
    pub context_dim: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    context_dim: Option<usize>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.params.config.clone(),
            vocab: self.vocab.clone(),
            context_dim: self.context_dim,
            tensors: self
                .params
                .layout
                .specs
                .iter()
                .map(|s| TensorEntry { name: s.name.clone(), rows: s.tensor.rows, cols: s.tensor.cols })
                .collect(),
        };
        let mut out = format!("{MAGIC}\n{}\n", serde_json::to_string(&header)?).into_bytes();
        out.reserve(self.params.data.len() * 8);
        for x in &self.params.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |line, msg: &str| Error::parse(path, line, msg);
        let nl1 = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad(1, "missing checkpoint header"))?;
        if &bytes[..nl1] != MAGIC.as_bytes() {
            return Err(bad(1, "not a checkpoint file"));
        }
        let rest = &bytes[nl1 + 1..];
        let nl2 = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad(2, "truncated metadata"))?;
        let header: Header = serde_json::from_slice(&rest[..nl2]).map_err(|e| bad(2, &e.to_string()))?;
        header.config.validate()?;
        if header.config.vocab_size != header.vocab.len() {
            return Err(bad(2, "vocabulary size does not match model config"));
        }
        let layout = Layout::new(&header.config);
        if layout.specs.len() != header.tensors.len()
            || layout
                .specs
                .iter()
                .zip(&header.tensors)
                .any(|(s, t)| s.name != t.name || s.tensor.rows != t.rows || s.tensor.cols != t.cols)
        {
            return Err(bad(2, "tensor table does not match model config"));
        }
        let payload = &rest[nl2 + 1..];
        if payload.len() != layout.total * 8 {
            return Err(bad(
                3,
                &format!("expected {} parameter bytes, found {}", layout.total * 8, payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Checkpoint {
            params: ModelParams { config: header.config, layout, data },
            vocab: header.vocab,
            context_dim: header.context_dim,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
