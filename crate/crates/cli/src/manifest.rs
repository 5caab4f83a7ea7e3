use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// What produced a set of outputs, enough to reproduce them.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub input: Option<PathBuf>,
    /// SHA-256 of the effective configuration text.
    pub config_digest: String,
    pub seed: u64,
    pub artifact_version: u32,
    pub tool_version: String,
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<PathBuf>,
}

pub fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Epoch seconds, pinned by `SOURCE_DATE_EPOCH` when set.
pub fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, input: Option<&Path>, config_text: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            input: input.map(Path::to_path_buf),
            config_digest: digest(config_text),
            seed,
            artifact_version: mbcri::artifact::ARTIFACT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started: now(),
            finished: 0,
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished = now();
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        std::fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}
