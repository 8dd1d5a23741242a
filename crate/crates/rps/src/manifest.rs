//! Run manifests.
//!
//! A manifest records everything needed to reproduce a run's outputs: the
//! command, its configuration (minus the output directory and worker
//! count, which do not affect results) with a SHA-256 of its canonical JSON,
//! the seed, format versions and digests of every input and output file.
//! No timestamps, so identical runs produce identical manifests.

use std::path::Path;

use rps_core::FORMAT_VERSION;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::write_json;
use crate::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Output file names relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// SHA-256 of the compact JSON encoding; object keys are sorted.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config_hash: config_hash(&config),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    /// Records `name` inside `out_dir` as an output.
    pub fn add_output(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        let mut d = digest_file(&out_dir.join(name))?;
        d.path = name.to_string();
        self.outputs.push(d);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join(MANIFEST_FILE), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":1,"b":[0.5]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":[0.5],"a":1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
    }
}
