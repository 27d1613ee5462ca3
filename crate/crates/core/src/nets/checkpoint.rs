//! Model checkpoints: one JSON document with the spec, run metadata and the
//! parameters as base64 of little-endian `f64`s.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{NetSpec, ParamStore};
use crate::error::{Error, Result};

const FORMAT: &str = "locsymp-checkpoint/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub seed: u64,
    pub tau: f64,
    /// Epochs trained so far, summed over resumed runs.
    pub epochs: usize,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    spec: NetSpec,
    seed: u64,
    tau: f64,
    epochs: usize,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
    param_count: usize,
    params: String,
}

impl Checkpoint {
    pub fn new(params: ParamStore, seed: u64, tau: f64, epochs: usize) -> Self {
        Checkpoint {
            params,
            seed,
            tau,
            epochs,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let bytes: Vec<u8> = self.params.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        let file = CheckpointFile {
            format: FORMAT.to_string(),
            spec: self.params.spec().clone(),
            seed: self.seed,
            tau: self.tau,
            epochs: self.epochs,
            metadata: self.metadata.clone(),
            param_count: self.params.len(),
            params: STANDARD.encode(bytes),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses and validates: the declared count, the decoded payload and the
    /// spec's predicted count must all agree.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT {
            return Err(Error::Parse(format!("unsupported checkpoint format {:?}", file.format)));
        }
        let bytes = STANDARD
            .decode(file.params.as_bytes())
            .map_err(|e| Error::Parse(format!("checkpoint parameters: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Parse(format!("checkpoint payload of {} bytes is not a whole number of f64", bytes.len())));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if values.len() != file.param_count {
            return Err(Error::dim("checkpoint payload", file.param_count, values.len()));
        }
        let params = ParamStore::from_values(&file.spec, values)?;
        Ok(Checkpoint {
            params,
            seed: file.seed,
            tau: file.tau,
            epochs: file.epochs,
            metadata: file.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
