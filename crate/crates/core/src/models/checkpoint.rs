use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::neural::Tensor2;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Portable snapshot of a model: its configuration, every weight tensor by name and
/// the fingerprint of the embedding table it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub embedding_fingerprint: String,
    pub weights: BTreeMap<String, Tensor2>,
}

impl Model {
    pub fn checkpoint(&self, embedding_fingerprint: &str) -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config().clone(),
            embedding_fingerprint: embedding_fingerprint.to_string(),
            weights: self
                .params()
                .into_iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    /// Rebuilds the model and installs the stored weights; names and shapes must
    /// match the architecture exactly.
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self, String> {
        let mut model = Model::build(ckpt.config.clone()).map_err(|e| e.to_string())?;
        let mut remaining = ckpt.weights.clone();
        for p in model.params_mut() {
            let w = remaining
                .remove(&p.name)
                .ok_or_else(|| format!("missing weight `{}`", p.name))?;
            if w.shape() != p.value.shape() {
                return Err(format!(
                    "weight `{}` has shape {:?}, expected {:?}",
                    p.name,
                    w.shape(),
                    p.value.shape()
                ));
            }
            if !w.is_finite() {
                return Err(format!("weight `{}` holds non-finite values", p.name));
            }
            p.value = w;
        }
        if let Some(name) = remaining.keys().next() {
            return Err(format!("unexpected weight `{name}`"));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &ModelCheckpoint) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut body = serde_json::to_string(ckpt).expect("checkpoint serializes");
    body.push('\n');
    fs::write(path, body).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a checkpoint and rebuilds its model. With `fingerprint`, the checkpoint
/// must have been trained against that embedding table.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    fingerprint: Option<&str>,
) -> Result<(Model, ModelCheckpoint), ModelError> {
    let path = path.as_ref();
    let p = path.display().to_string();
    let body = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: p.clone(),
        source,
    })?;
    let corrupt = |message: String| ModelError::Corrupt {
        path: p.clone(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(&body).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(ModelError::Version {
            path: p.clone(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ckpt: ModelCheckpoint = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    if let Some(expected) = fingerprint {
        if ckpt.embedding_fingerprint != expected {
            return Err(ModelError::Fingerprint {
                expected: ckpt.embedding_fingerprint.clone(),
                found: expected.to_string(),
            });
        }
    }
    let model = Model::from_checkpoint(&ckpt).map_err(corrupt)?;
    Ok((model, ckpt))
}
