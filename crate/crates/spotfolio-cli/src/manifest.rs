//! Run manifests: enough provenance to reproduce any output file.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Provenance block embedded in every output: what produced it, from which
/// inputs (by content digest), and under which resolved settings.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    /// Effective settings after merging flags over file values and defaults.
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    /// The path as given on the command line.
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(subcommand: &'static str) -> Self {
        RunManifest {
            tool: "spotfolio",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed: None,
            inputs: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    /// Records an input file by path and content digest.
    pub fn add_input(&mut self, path: &Path) -> Result<(), Failure> {
        let bytes = std::fs::read(path)
            .map_err(|e| Failure::Input(anyhow::anyhow!("reading {}: {e}", path.display())))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let mut sha256 = String::with_capacity(64);
        for byte in digest {
            sha256.push_str(&format!("{byte:02x}"));
        }
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("manifest serializes")
    }

    /// Writes `manifest.json` into `dir` (used alongside CSV outputs).
    pub fn write(&self, dir: &Path) -> Result<PathBuf, Failure> {
        let path = dir.join("manifest.json");
        let mut text =
            serde_json::to_string_pretty(&self.to_value()).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text)
            .map_err(|e| Failure::Input(anyhow::anyhow!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}
