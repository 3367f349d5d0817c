//! Weight checkpoints: every layer matrix with its shape, as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub policy: Mlp,
    pub human_model: Mlp,
    pub decoder: Mlp,
}

impl Checkpoint {
    pub fn new(policy: &Mlp, human_model: &Mlp, decoder: &Mlp) -> Self {
        Checkpoint {
            policy: policy.clone(),
            human_model: human_model.clone(),
            decoder: decoder.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Hex sha256 of the serialized weights.
    pub fn digest(&self) -> Result<String> {
        Ok(hex_digest(self.to_json()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
