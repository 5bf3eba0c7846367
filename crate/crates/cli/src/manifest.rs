//! Run manifests: what a subcommand read, how it was configured, what it wrote.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use forge_core::config::Config;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    /// Dotted config keys that differ from the defaults.
    pub overrides: Vec<String>,
    pub config: Config,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn file_entry(role: &str, path: &Path) -> Result<FileEntry> {
    let bytes = std::fs::read(path).with_context(|| format!("{}: cannot read for hashing", path.display()))?;
    Ok(FileEntry {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Collects inputs and outputs during a run, then writes the manifest beside
/// the primary output.
pub struct Run {
    subcommand: &'static str,
    config: Config,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
    warnings: Vec<String>,
}

impl Run {
    pub fn new(subcommand: &'static str, config: Config, config_path: Option<&Path>) -> Self {
        let mut run = Self {
            subcommand,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        };
        if let Some(p) = config_path {
            run.input("config", p);
        }
        run
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn input<'a>(&mut self, role: &str, path: &'a Path) -> &'a Path {
        self.inputs.push((role.to_string(), path.to_path_buf()));
        path
    }

    pub fn output<'a>(&mut self, role: &str, path: &'a Path) -> &'a Path {
        self.outputs.push((role.to_string(), path.to_path_buf()));
        path
    }

    pub fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Writes `<first output>.manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let primary = self
            .outputs
            .first()
            .map(|(_, p)| p.clone())
            .context("run declared no outputs")?;
        let hash_all = |files: &[(String, PathBuf)]| -> Result<Vec<FileEntry>> {
            files.iter().map(|(r, p)| file_entry(r, p)).collect()
        };
        let manifest = Manifest {
            tool: "forge",
            version: env!("CARGO_PKG_VERSION"),
            core_version: forge_core::VERSION,
            subcommand: self.subcommand.to_string(),
            seed: self.config.seed,
            overrides: self.config.overrides(),
            config: self.config.clone(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            warnings: self.warnings,
        };
        let mut name = primary.into_os_string();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        forge_core::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}
