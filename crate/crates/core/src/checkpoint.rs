//! JSON checkpoint container shared by reward models and policies.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::nn::Params;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<C> {
    pub schema_version: u32,
    /// Model kind tag, e.g. `reward-o` or `policy`.
    pub kind: String,
    pub config: C,
    pub vocab_fingerprint: String,
    pub params: Params,
    /// Hash of the training configuration that produced the parameters.
    pub training_config_hash: Option<String>,
}

impl<C: Serialize> Checkpoint<C> {
    /// Content hash of the parameters, used as a checkpoint id.
    pub fn id(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(&self.params)?)[..16].to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

impl<C: DeserializeOwned> Checkpoint<C> {
    pub fn load(path: &Path, expected_kind: Option<&str>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let version = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                line: 1,
                detail: "missing schema_version".into(),
            })?;
        if version != CHECKPOINT_SCHEMA_VERSION as u64 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                found: version as u32,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let ckpt: Self = serde_json::from_value(value)?;
        if let Some(kind) = expected_kind {
            if ckpt.kind != kind {
                return Err(Error::Config(format!(
                    "{} holds a {:?} checkpoint, expected {kind:?}",
                    path.display(),
                    ckpt.kind
                )));
            }
        }
        Ok(ckpt)
    }
}
