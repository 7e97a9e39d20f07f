//! Binary checkpoint format:
//!
//! ```text
//! "SSQ1" | version u16 LE | metadata length u64 LE | metadata JSON | f64 LE blobs
//! ```
//!
//! The metadata lists each parameter's name and shape in blob order plus a
//! SHA-256 of the blob section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TrainConfig;
use crate::corpus::Vocab;
use crate::models::{ModelConfig, ModelParams, Seq2Seq};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SSQ1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What training knew when this checkpoint was taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// 1-based epoch the parameters come from.
    pub epoch: usize,
    pub best_validation_nll: f64,
    pub test_nll: Option<f64>,
    pub epochs_run: usize,
    pub split_seed: u64,
    /// Holds the init and epoch seeds.
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    pub track_vocab: Vocab,
    pub word_vocab: Vocab,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    model: ModelConfig,
    track_vocab: Vocab,
    word_vocab: Vocab,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
    blob_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs = Vec::with_capacity(self.params.count() * 8);
        for t in self.params.tensors() {
            for v in t.data() {
                blobs.extend_from_slice(&v.to_le_bytes());
            }
        }
        let metadata = Metadata {
            model: self.model.clone(),
            track_vocab: self.track_vocab.clone(),
            word_vocab: self.word_vocab.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            blob_sha256: hex(&Sha256::digest(&blobs)),
        };
        let json = serde_json::to_vec(&metadata).expect("metadata is always serializable");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let short = |what: &str| CheckpointError::Truncated(format!("file ends inside the {what}"));
        if bytes.len() < 4 {
            return Err(short("magic bytes"));
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::Corrupt("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < 6 {
            return Err(short("version"));
        }
        let found = u16::from_le_bytes([bytes[4], bytes[5]]);
        if found != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(short("header"));
        }
        let meta_len = u64::from_le_bytes(bytes[6..HEADER_LEN].try_into().unwrap());
        let meta_end = usize::try_from(meta_len)
            .ok()
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| CheckpointError::Corrupt("metadata length overflows".into()))?;
        if bytes.len() < meta_end {
            return Err(short("metadata"));
        }
        let md: Metadata = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;

        let expected: usize = md
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() * 8)
            .sum();
        let blobs = &bytes[meta_end..];
        if blobs.len() < expected {
            return Err(short("parameter data"));
        }
        if blobs.len() > expected {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes after parameter data",
                blobs.len() - expected
            )));
        }
        if hex(&Sha256::digest(blobs)) != md.blob_sha256 {
            return Err(CheckpointError::Corrupt("parameter checksum mismatch".into()));
        }

        let mut names = Vec::with_capacity(md.tensors.len());
        let mut tensors = Vec::with_capacity(md.tensors.len());
        let mut floats = blobs
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for entry in md.tensors {
            let n = entry.shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            let t = Tensor::new(entry.shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("tensor {}: {e}", entry.name)))?;
            names.push(entry.name);
            tensors.push(t);
        }
        let params = ModelParams::from_named(names, tensors)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let model = Seq2Seq::new(md.model.clone()).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        model
            .check_params(&params)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        if md.track_vocab.len() != md.model.source_vocab_size
            || md.word_vocab.len() != md.model.target_vocab_size
        {
            return Err(CheckpointError::Corrupt(
                "vocabulary sizes disagree with the model configuration".into(),
            ));
        }
        Ok(Self {
            model: md.model,
            params,
            track_vocab: md.track_vocab,
            word_vocab: md.word_vocab,
            meta: md.meta,
        })
    }
}

/// Writes through a temporary sibling file so a crash never leaves a partial
/// checkpoint at `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CheckpointError::Io(std::io::Error::other("checkpoint path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&ckpt.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
