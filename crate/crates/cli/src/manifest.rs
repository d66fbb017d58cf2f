//! Per-run provenance records.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Digest of the full argument set.
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Self {
        let config_json = serde_json::to_vec(config).expect("arguments serialize");
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config_sha256: sha256_hex(&config_json),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix_ms: now_ms(),
                finished_unix_ms: 0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.outputs.push(file_digest(path)?);
        Ok(())
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix_ms = now_ms();
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        Ok(self.manifest)
    }
}

/// `out.csv` -> `out.csv.manifest.json`; directories get `manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join("manifest.json")
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}
