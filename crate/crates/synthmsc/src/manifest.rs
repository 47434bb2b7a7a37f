//! Provenance record written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Invocation;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration; replaying it reruns the command.
    pub invocation: Invocation,
    /// SHA-256 of each input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    pub version: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(invocation: &Invocation) -> anyhow::Result<Self> {
        let mut inputs = BTreeMap::new();
        for path in invocation.input_files() {
            inputs.insert(path.display().to_string(), sha256_file(&path)?);
        }
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(RunManifest {
            command: invocation.name().to_string(),
            invocation: invocation.clone(),
            inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: invocation.seed(),
            timestamp,
        })
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails if any input changed since the manifest was written.
    pub fn verify_inputs(&self) -> anyhow::Result<()> {
        for (path, digest) in &self.inputs {
            let now = sha256_file(Path::new(path))?;
            if &now != digest {
                bail!("input {path} changed since the manifest was written");
            }
        }
        Ok(())
    }
}
