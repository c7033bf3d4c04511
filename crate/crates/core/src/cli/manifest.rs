use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::write_atomic;

/// Provenance record written once per invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    /// SHA-256 over the command line and the bytes of every input file.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub started_at: u64,
    pub finished_at: u64,
    pub outputs: Vec<PathBuf>,
    pub exit_code: i32,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Hash of everything that determines a run's numeric output. Missing input
/// files hash as empty so that the hash itself never fails.
pub fn config_hash(argv: &[String], inputs: &[PathBuf]) -> String {
    let mut h = Sha256::new();
    for a in argv {
        h.update(a.as_bytes());
        h.update([0]);
    }
    for p in inputs {
        h.update(p.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(p).unwrap_or_default());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, format!("{}\n", self.to_json()).as_bytes())
    }
}
