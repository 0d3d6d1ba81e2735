//! Provenance manifests tying every output file to the config that made it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::SystemTime;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Machine-readable record of one pipeline invocation.
#[derive(Debug, Serialize)]
pub struct Manifest {
    tool: String,
    version: String,
    subcommand: String,
    created: String,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// Starts a manifest; `payload` (the resolved arguments) is hashed into `config_hash`.
    pub fn new<P: Serialize>(subcommand: &str, payload: &P) -> anyhow::Result<Self> {
        let serialized =
            serde_json::to_string(payload).context("serializing configuration for hashing")?;
        let mut hasher = Sha256::new();
        hasher.update(subcommand.as_bytes());
        hasher.update([0]);
        hasher.update(serialized.as_bytes());
        let config_hash = format!("sha256:{:x}", hasher.finalize());
        Ok(Manifest {
            tool: "lmm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            created: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    /// Records an input file under a stable role name.
    pub fn input(&mut self, role: &str, path: &Path) -> &mut Self {
        self.inputs.insert(role.into(), path.display().to_string());
        self
    }

    /// Records an input file when present.
    pub fn input_opt(&mut self, role: &str, path: Option<&Path>) -> &mut Self {
        if let Some(p) = path {
            self.input(role, p);
        }
        self
    }

    /// Records an output file under a stable role name.
    pub fn output(&mut self, role: &str, path: &Path) -> &mut Self {
        self.outputs.insert(role.into(), path.display().to_string());
        self
    }

    /// Writes the manifest as pretty-printed JSON.
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut json = serde_json::to_string_pretty(self).context("serializing manifest")?;
        json.push('\n');
        fs::write(path, json).with_context(|| format!("writing manifest {}", path.display()))?;
        log::info!("wrote manifest {}", path.display());
        Ok(())
    }
}
