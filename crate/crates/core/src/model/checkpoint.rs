use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamStore};
use crate::error::{Result, TimeCfError};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "timecf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

impl Model {
    /// JSON document holding the config and every named parameter array.
    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .params
                .specs()
                .iter()
                .zip(self.params.tensors())
                .map(|(s, t)| ParamEntry {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)
            .map_err(|e| TimeCfError::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(TimeCfError::Checkpoint(format!(
                "unknown format {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(TimeCfError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.config.validate()?;
        let named = file
            .params
            .into_iter()
            .map(|e| Ok((e.name, Tensor::new(&e.shape, e.data)?)))
            .collect::<Result<Vec<_>>>()?;
        let params = ParamStore::from_named(&file.config, named)?;
        Model::from_parts(file.config, params)
    }

    /// Writes the checkpoint, creating missing parent directories.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| TimeCfError::Path {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        fs::write(path, self.to_checkpoint_json()).map_err(|source| TimeCfError::Path {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| TimeCfError::Path {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint_json(&text)
    }

    /// Loads `path` and requires its config to equal `expected`.
    pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load_checkpoint(path)?;
        let diff = model.config.diff(expected);
        if !diff.is_empty() {
            return Err(TimeCfError::Checkpoint(format!(
                "checkpoint config differs (checkpoint vs requested): {}",
                diff.join(", ")
            )));
        }
        Ok(model)
    }
}
