//! Run manifests: every command records its resolved flags, seeds, input
//! hashes, toolkit version, and timestamps, enough to re-execute the run.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::util::{atomic_write, fnv1a_64};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub flags: BTreeMap<String, serde_json::Value>,
    pub seeds: BTreeMap<String, u64>,
    /// FNV-1a 64 of each input file's content, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            flags: BTreeMap::new(),
            seeds: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn flag(&mut self, key: &str, value: impl Serialize) {
        self.flags.insert(
            key.to_string(),
            serde_json::to_value(value).expect("flag value serializes"),
        );
    }

    pub fn seed(&mut self, key: &str, value: u64) {
        self.seeds.insert(key.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_hashes.insert(
            path.display().to_string(),
            format!("{:016x}", fnv1a_64(&bytes)),
        );
        Ok(())
    }

    /// Stamp the end time and write `manifest.json` atomically into `dir`.
    pub fn finish(mut self, dir: &Path) -> std::io::Result<()> {
        self.finished_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        atomic_write(&dir.join("manifest.json"), json.as_bytes())
    }
}
