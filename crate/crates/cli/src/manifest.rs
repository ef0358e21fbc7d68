//! Artifact files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use metamorph::io::{GrayImage, Table};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub kind: String,
    pub seed: u64,
    pub version: Versions,
    pub inputs: ExperimentConfig,
    pub summary: Value,
    pub wall_time_seconds: f64,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub metamorph: &'static str,
    pub metamorph_cli: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        // Both crates are versioned together.
        Self {
            metamorph: env!("CARGO_PKG_VERSION"),
            metamorph_cli: env!("CARGO_PKG_VERSION"),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files into one directory and records their hashes in write order.
pub struct ArtifactWriter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            bytes: data.len(),
            sha256: sha256_hex(data),
        });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        self.bytes(name, table.to_csv().as_bytes())
    }

    pub fn pgm(&mut self, name: &str, image: &GrayImage) -> Result<()> {
        self.bytes(name, &image.to_pgm())
    }

    pub fn finish(self) -> Vec<Artifact> {
        self.artifacts
    }
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifests always serialize");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
