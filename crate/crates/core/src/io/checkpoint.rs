//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `PUIRCKPT`, a little-endian u64 metadata length,
//! the metadata as JSON, then every tensor as little-endian f64 in the order
//! listed by the metadata.

use std::fs;
use std::path::Path;

use puir_autograd::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::losses::LossReport;
use crate::model::config::hex;
use crate::model::{Model, ModelConfig, ParamStore};
use crate::{PuirError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PUIRCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config_hash: String,
    pub model: ModelConfig,
    pub modalities: Vec<String>,
    /// `pretrain`, `finetune-seg`, `finetune-transfer` or `init`.
    pub task: String,
    pub epoch: usize,
    pub losses: Option<LossReport>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, modalities: Vec<String>, task: &str, epoch: usize, losses: Option<LossReport>) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            meta: CheckpointMeta {
                format_version: CHECKPOINT_FORMAT_VERSION,
                config_hash: model.config.config_hash(),
                model: model.config.clone(),
                modalities,
                task: task.to_string(),
                epoch,
                losses,
                tensors,
            },
            model,
        }
    }

    pub fn modality_index(&self, id: &str) -> Result<usize> {
        self.meta
            .modalities
            .iter()
            .position(|m| m == id)
            .ok_or_else(|| PuirError::UnknownModality(id.to_string()))
    }
}

/// What the loader should expect of the file.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions<'a> {
    /// Architecture the caller intends to use; shapes must match it exactly.
    pub expected: Option<&'a ModelConfig>,
    /// Accept a config-hash mismatch (with a warning) when shapes still agree.
    pub allow_hash_mismatch: bool,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PuirError::io(parent, e))?;
    }
    let meta = serde_json::to_vec(&ckpt.meta)?;
    let scalars = ckpt.model.params.num_scalars();
    let mut bytes = Vec::with_capacity(16 + meta.len() + scalars * 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta);
    for entry in &ckpt.meta.tensors {
        let t = ckpt.model.params.get(&entry.name)?;
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| PuirError::io(path, e))
}

fn corrupt(msg: impl Into<String>) -> PuirError {
    PuirError::Checkpoint(msg.into())
}

pub fn load_checkpoint(path: &Path, opts: &LoadOptions) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| PuirError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt(format!("{} is not a checkpoint", path.display())));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    if meta_len > body.len() as u64 {
        return Err(corrupt("metadata length exceeds file size"));
    }
    let meta_len = meta_len as usize;
    let meta: CheckpointMeta = serde_json::from_slice(&body[..meta_len])
        .map_err(|e| PuirError::Schema {
            field: "checkpoint.metadata".into(),
            message: e.to_string(),
        })?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(PuirError::Schema {
            field: "checkpoint.format_version".into(),
            message: format!("expected {CHECKPOINT_FORMAT_VERSION}, found {}", meta.format_version),
        });
    }
    if meta.model.config_hash() != meta.config_hash {
        return Err(corrupt("stored config hash does not match stored config"));
    }

    let mut data = &body[meta_len..];
    let mut params = ParamStore::new();
    for entry in &meta.tensors {
        let n = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt(format!("tensor `{}` shape overflows", entry.name)))?;
        let need = n.checked_mul(8).filter(|&b| b <= data.len()).ok_or_else(|| {
            corrupt(format!("tensor `{}` needs more bytes than the file holds", entry.name))
        })?;
        let values = data[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(&entry.name, Tensor::new(entry.shape.clone(), values)?);
        data = &data[need..];
    }
    if !data.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", data.len())));
    }

    let model = Model {
        config: meta.model.clone(),
        params,
    };
    model.validate()?;
    if let Some(expected) = opts.expected {
        let probe = Model {
            config: expected.clone(),
            params: model.params.clone(),
        };
        probe.validate().map_err(|e| corrupt(format!("refusing to load into the requested model: {e}")))?;
        if expected.config_hash() != meta.config_hash {
            if !opts.allow_hash_mismatch {
                return Err(corrupt(format!(
                    "config hash {} differs from the requested model's {}",
                    meta.config_hash,
                    expected.config_hash()
                )));
            }
            log::warn!("loading checkpoint with a different config hash; shapes agree");
        }
    }
    Ok(Checkpoint { meta, model })
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| PuirError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(modalities: usize) -> ModelConfig {
        ModelConfig {
            modalities,
            width: 4,
            depth: 2,
            slots: 3,
            proj_dim: 4,
            use_prior: true,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let model = Model::new(small(3), 5).unwrap();
        let ck = Checkpoint::new(model, vec!["a".into(), "b".into(), "c".into()], "init", 0, None);
        save_checkpoint(&ck, &p).unwrap();
        let back = load_checkpoint(&p, &LoadOptions::default()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn wrong_modality_count_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(Model::new(small(3), 5).unwrap(), vec![], "init", 0, None);
        save_checkpoint(&ck, &p).unwrap();
        let four = small(4);
        let opts = LoadOptions {
            expected: Some(&four),
            allow_hash_mismatch: true,
        };
        assert!(matches!(load_checkpoint(&p, &opts), Err(PuirError::Checkpoint(_))));
    }

    #[test]
    fn hash_mismatch_needs_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(Model::new(small(3), 5).unwrap(), vec![], "init", 0, None);
        save_checkpoint(&ck, &p).unwrap();
        // Same shapes, different (non-shape) hyperparameter.
        let other = ModelConfig {
            use_prior: false,
            ..small(3)
        };
        let strict = LoadOptions {
            expected: Some(&other),
            allow_hash_mismatch: false,
        };
        assert!(load_checkpoint(&p, &strict).is_err());
        let lenient = LoadOptions {
            expected: Some(&other),
            allow_hash_mismatch: true,
        };
        assert!(load_checkpoint(&p, &lenient).is_ok());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = Checkpoint::new(Model::new(small(2), 1).unwrap(), vec![], "init", 0, None);
        save_checkpoint(&ck, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&p, &LoadOptions::default()).is_err());
        fs::write(&p, b"PUIRCKPT\xff\xff\xff\xff\xff\xff\xff\x7f").unwrap();
        assert!(load_checkpoint(&p, &LoadOptions::default()).is_err());
    }
}
