//! Run manifest: configuration hash, seed, and a content hash per artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    /// Relative artifact path → SHA-256 of the file bytes.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Manifest {
            config_hash,
            seed,
            files: BTreeMap::new(),
        }
    }

    /// Hashes a written artifact and records it under its path relative to
    /// the output root.
    pub fn record(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let rel = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.files.insert(rel, hash_bytes(&bytes));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::create_parent(path)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
