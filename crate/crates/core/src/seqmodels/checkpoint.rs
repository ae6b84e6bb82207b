//! Model checkpoints.
//!
//! Layout (little-endian): magic `TSCK`, `u16` version, `u32` header length,
//! a JSON header `{config, norm_stats, vocabulary, seed, tags}`, then every
//! parameter as `u16` name length, name bytes and a `TSM1` blob. Vectors are
//! stored as `1 x n` and 3-D kernels `(k, r, c)` as `(k * r) x c`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, Dimension, Ix2, IxDyn};
use serde::{Deserialize, Serialize};

use super::{Arch, ModelConfig, ParamSet, SeqModel};
use crate::error::{Error, Result};
use crate::featfuse::NormStats;
use crate::tsm::{self, Dtype};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSCK";
const VERSION: u16 = 1;

/// A trained model with the normalization and class names it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SeqModel,
    pub norm_stats: NormStats,
    pub vocabulary: Vec<String>,
    /// Free-form provenance such as the input modalities.
    pub tags: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    norm_stats: NormStats,
    vocabulary: Vec<String>,
    seed: u64,
    #[serde(default)]
    tags: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: SeqModel, norm_stats: NormStats, vocabulary: Vec<String>) -> Result<Self> {
        if vocabulary.len() != model.config().num_classes {
            return Err(Error::VocabularyMismatch {
                expected: model.config().num_classes,
                got: vocabulary.len(),
            });
        }
        Ok(Self {
            model,
            norm_stats,
            vocabulary,
            tags: BTreeMap::new(),
        })
    }

    /// Rejects checkpoints whose class count differs from `classes`.
    pub fn expect_classes(&self, classes: usize) -> Result<()> {
        let got = self.model.config().num_classes;
        if got != classes {
            return Err(Error::VocabularyMismatch { expected: classes, got });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.model.config().clone(),
            norm_stats: self.norm_stats.clone(),
            vocabulary: self.vocabulary.clone(),
            seed: self.model.seed(),
            tags: self.tags.clone(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, tensor) in self.model.params().iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let flat = flatten(tensor);
            tsm::write_matrix(&mut out, flat.view(), Dtype::F64).expect("writing to a Vec");
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let header_bytes = bytes.get(10..10 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        let template = SeqModel::init(header.config.clone(), 0)?;

        let mut pos = 10 + hlen;
        let mut params = ParamSet::new();
        while pos < bytes.len() {
            let len_bytes = bytes.get(pos..pos + 2).ok_or_else(|| fmt("truncated tensor name"))?;
            let nlen = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
            pos += 2;
            let name = bytes
                .get(pos..pos + nlen)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| fmt("bad tensor name"))?
                .to_string();
            pos += nlen;
            let (flat, used) = tsm::decode_matrix(&bytes[pos..])?;
            pos += used;
            let shape = template
                .params()
                .shape_of(&name)
                .ok_or_else(|| fmt(&format!("unexpected tensor `{name}`")))?;
            let tensor = unflatten(flat, &shape).ok_or_else(|| fmt(&format!("tensor `{name}` has the wrong size")))?;
            params.insert(name, tensor);
        }
        let model = SeqModel::from_params(header.config, params, header.seed)?;
        let mut ck = Checkpoint::new(model, header.norm_stats, header.vocabulary)?;
        ck.tags = header.tags;
        Ok(ck)
    }

    pub fn with_tag(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(key.into(), value.into());
        self
    }
}

fn flatten(t: &ArrayD<f64>) -> ndarray::Array2<f64> {
    let shape = t.shape();
    let (rows, cols) = match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => {
            let cols = *shape.last().unwrap();
            (t.len() / cols.max(1), cols)
        }
    };
    let data: Vec<f64> = t.iter().copied().collect();
    ndarray::Array2::from_shape_vec((rows, cols), data).expect("size preserved")
}

fn unflatten(flat: ndarray::Array2<f64>, shape: &IxDyn) -> Option<ArrayD<f64>> {
    if flat.len() != shape.size() {
        return None;
    }
    let data: Vec<f64> = flat.into_dimensionality::<Ix2>().ok()?.iter().copied().collect();
    ArrayD::from_shape_vec(shape.clone(), data).ok()
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and checks it holds the requested architecture.
pub fn load_checkpoint_expecting(path: &Path, arch: Arch) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.model.config().arch != arch {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model, {} requested",
            ck.model.config().arch,
            arch
        )));
    }
    Ok(ck)
}
