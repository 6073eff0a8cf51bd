//! Run manifests: everything needed to repeat a command exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const FILE_NAME: &str = "manifest.toml";

/// SHA-256 over a git-style blob header and the file content.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Hashes a file, or every file of a directory (sorted by name).
pub fn hash_inputs(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| p.is_file());
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    for f in files {
        let bytes = fs::read(&f).with_context(|| format!("hashing {}", f.display()))?;
        out.insert(f.display().to_string(), blob_hash(&bytes));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Versions {
    eprgail: &'static str,
    manifest_format: u32,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    args: &'a [String],
    notes: &'a [String],
    versions: Versions,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    results: &'a BTreeMap<String, String>,
    config: &'a RunConfig,
}

pub struct ManifestWriter {
    pub command: String,
    pub seed: u64,
    pub args: Vec<String>,
    pub notes: Vec<String>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub results: BTreeMap<String, String>,
}

impl ManifestWriter {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            args: std::env::args().collect(),
            notes: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn write(&self, cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.extend(hash_inputs(p)?);
        }
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.extend(hash_inputs(p)?);
        }
        let m = Manifest {
            command: &self.command,
            seed: self.seed,
            args: &self.args,
            notes: &self.notes,
            versions: Versions {
                eprgail: env!("CARGO_PKG_VERSION"),
                manifest_format: 1,
            },
            inputs,
            outputs,
            results: &self.results,
            config: cfg,
        };
        let path = out_dir.join(FILE_NAME);
        fs::write(&path, toml::to_string(&m)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin` with the sha256 object format.
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
