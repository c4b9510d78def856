//! Run manifest: enough to rerun a command exactly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wgopo_core::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration written next to the manifest.
    pub config_sha256: String,
    pub config_file: String,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

/// Collects output files and writes the manifest last.
pub struct Outputs {
    pub dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, content).with_context(|| format!("writing {}", p.display()))
    }

    pub fn finish(mut self, command: &str, cfg: &RunConfig, details: serde_json::Value) -> Result<()> {
        self.text(CONFIG_COPY, &cfg.to_toml())?;
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: cfg.seed,
            config_sha256: config_hash(cfg),
            config_file: CONFIG_COPY.to_string(),
            outputs: self.files.clone(),
            details,
        };
        let p = self.dir.join(MANIFEST);
        let body = serde_json::to_string_pretty(&m)? + "\n";
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    }
}

pub fn read(dir: &Path) -> Result<Manifest> {
    let p = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| wgopo_core::Error::Parse(format!("{}: {e}", p.display())))
        .map_err(Into::into)
}
