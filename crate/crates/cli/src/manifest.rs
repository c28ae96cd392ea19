//! Run manifests: the resolved config, its hash, and digests of every input
//! and output file, written next to the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub args: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Recorder {
    command: String,
    config: ExperimentConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Recorder {
            command: command.into(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let digest = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let config_json = serde_json::to_vec(&self.config)?;
        let manifest = Manifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: hex::encode(Sha256::digest(&config_json)),
            config: self.config,
            args: std::env::args().collect(),
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
