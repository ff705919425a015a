//! Run manifests: every output file is recorded with its checksum, and a
//! failed run removes whatever it had already written so no unmanifested
//! files survive.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::{CliError, CliResult};

#[derive(Debug, Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config_hash: String,
    seed: u64,
    started_at: String,
    finished_at: String,
    config: &'a serde_json::Value,
    outputs: Vec<ManifestEntry>,
}

/// Collects output files for one run; writes the manifest on `finish` and
/// deletes everything it wrote if dropped unfinished.
pub struct RunWriter {
    dir: PathBuf,
    seed: u64,
    config: serde_json::Value,
    started_at: String,
    written: Vec<(String, String)>,
    paths: Vec<PathBuf>,
    finished: bool,
}

impl RunWriter {
    pub fn new(dir: &Path, seed: u64, config: serde_json::Value) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            seed,
            config,
            started_at: chrono::Utc::now().to_rfc3339(),
            written: Vec::new(),
            paths: Vec::new(),
            finished: false,
        })
    }


    /// Write one output file (relative to the run directory) and record
    /// its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("creating {}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        self.written
            .push((name.to_string(), hex::encode(Sha256::digest(bytes))));
        self.paths.push(path);
        Ok(())
    }

    /// Write the manifest and keep all outputs.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION"),
            config_hash: hex::encode(Sha256::digest(
                serde_json::to_vec(&self.config).map_err(CliError::io)?,
            )),
            seed: self.seed,
            started_at: self.started_at.clone(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            config: &self.config,
            outputs: self
                .written
                .iter()
                .map(|(path, sha256)| ManifestEntry {
                    path: path.clone(),
                    sha256: sha256.clone(),
                })
                .collect(),
        };
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(CliError::io)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))?;
        self.finished = true;
        Ok(path)
    }
}

impl Drop for RunWriter {
    fn drop(&mut self) {
        if !self.finished {
            for path in &self.paths {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}
