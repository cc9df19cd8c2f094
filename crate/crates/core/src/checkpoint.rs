//! JSON checkpoints of trained parameters, tagged with a hash of the
//! configuration that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::io::write_atomic;
use crate::model::{ModelParams, Parameters};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub params: ModelParams,
}

/// SHA-256 of the compact JSON encoding, as lowercase hex.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, config_hash: &str) -> Result<()> {
    let ck = Checkpoint {
        format_version: FORMAT_VERSION,
        config_hash: config_hash.to_string(),
        params: params.clone(),
    };
    let mut bytes = serde_json::to_vec(&ck)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a checkpoint and checks every tensor against `expected`'s shapes.
pub fn load_checkpoint(path: &Path, expected: &ModelParams) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if ck.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            ck.format_version
        )));
    }
    let (got, want) = (ck.params.shapes(), expected.shapes());
    if got != want {
        return Err(Error::Checkpoint(format!(
            "parameter shapes {got:?} do not match the model {want:?}"
        )));
    }
    Ok(ck)
}
