//! Provenance records written next to every generated artifact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

impl FileEntry {
    pub fn of(dir: &Path, rel: &str) -> Result<Self> {
        Ok(Self {
            path: rel.to_string(),
            sha256: file_sha256(dir.join(rel))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub code_version: String,
    /// SHA-256 of the config document exactly as stored in `config.toml`.
    pub config_hash: Option<String>,
    pub root_seed: u64,
    pub files: Vec<FileEntry>,
}

impl Provenance {
    pub fn new(command: &str, root_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            code_version: CODE_VERSION.to_string(),
            config_hash: None,
            root_seed,
            files: Vec::new(),
        }
    }
}

/// Serializes `value` to `<dir>/manifest.json` and returns the SHA-256 of the bytes written.
pub fn write_manifest<T: Serialize>(dir: impl AsRef<Path>, value: &T) -> Result<String> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::create_dir_all(dir.as_ref())?;
    fs::write(dir.as_ref().join("manifest.json"), &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn manifest_hash(dir: impl AsRef<Path>) -> Result<String> {
    file_sha256(dir.as_ref().join("manifest.json"))
}
