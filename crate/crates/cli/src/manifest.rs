use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Serialize)]
pub struct HashedPath {
    pub path: String,
    pub sha256: String,
}

/// Record of one successful command run, written last and atomically.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<HashedPath>,
    pub artifacts: Vec<HashedPath>,
    pub duration_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<HashedPath, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(HashedPath {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects inputs and artifacts while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes `bytes` atomically and records the file as an artifact.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        attrib_core::write_atomic(path, bytes).map_err(|e| Failure::internal(format!("writing {}: {e}", path.display())))?;
        self.artifacts.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(self, manifest_path: &Path, config: serde_json::Value, seed: Option<u64>) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: self.command,
            config,
            seed,
            inputs: self.inputs.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?,
            artifacts: self.artifacts.iter().map(|p| hash_file(p)).collect::<Result<_, _>>()?,
            duration_ms: self.started.elapsed().as_millis(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(Failure::internal)?;
        bytes.push(b'\n');
        attrib_core::write_atomic(manifest_path, &bytes)
            .map_err(|e| Failure::internal(format!("writing {}: {e}", manifest_path.display())))
    }
}
