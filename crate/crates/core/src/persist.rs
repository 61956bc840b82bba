//! JSON artifact persistence. Every persisted file embeds the same header
//! fields (`format_version`, `rng_seed`, `config_digest`) so runs are
//! self-describing and byte-identical for equal digests.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub format_version: u32,
    pub rng_seed: u64,
    pub config_digest: String,
}

impl ArtifactMeta {
    pub fn new(rng_seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            rng_seed,
            config_digest: config_digest.into(),
        }
    }
}

/// Pretty-printed JSON with a trailing newline. Struct field order fixes the
/// byte layout.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}
