use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Contents of `run.json`. The timestamp lives here and nowhere else, so data
/// artifacts stay byte-identical across runs.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub versions: Versions,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timestamp: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub truthprobe: &'static str,
    pub cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects digests of input files; dump directories contribute each dump
/// file that exists.
#[derive(Debug, Default)]
pub struct Tracker {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Tracker {
    pub fn input_file(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn input_dump(&mut self, dir: &Path) {
        for name in [
            truthprobe::data::format::MANIFEST_FILE,
            truthprobe::data::format::BLOB_FILE,
            truthprobe::data::format::RESAMPLES_FILE,
        ] {
            let p = dir.join(name);
            if p.exists() {
                self.inputs.push(p);
            }
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }

    /// Writes `run.json` into `dir`.
    pub fn finish(&self, dir: &Path, command: &str, seed: u64) -> Result<()> {
        let record = RunRecord {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            versions: Versions {
                truthprobe: truthprobe::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
            inputs: Self::digests(&self.inputs)?,
            outputs: Self::digests(&self.outputs)?,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(&record)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
