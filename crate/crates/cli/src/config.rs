//! Experiment configuration: one JSON file covering every pipeline stage.
//! Relative paths resolve against the output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use moodshift::catalog::SplitRatios;
use moodshift::{SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogPaths {
    pub embeddings: PathBuf,
    pub metadata: PathBuf,
    pub mood_count: usize,
    pub genre_count: Option<usize>,
    pub instrument_count: Option<usize>,
}

impl Default for CatalogPaths {
    fn default() -> Self {
        CatalogPaths {
            embeddings: "catalog.emb".into(),
            metadata: "catalog.jsonl".into(),
            mood_count: 4,
            genre_count: None,
            instrument_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub path: PathBuf,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: SplitRatios::default(),
            seed: 0,
            path: "split.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub catalog: CatalogPaths,
    pub split: SplitConfig,
    pub train: TrainConfig,
    /// Seed for stochastic evaluation (oracle top-K draws).
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            catalog: CatalogPaths::default(),
            split: SplitConfig::default(),
            train: TrainConfig {
                kfold: None,
                ..TrainConfig::small_scale()
            },
            eval_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Applies a master seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.eval_seed = seed;
        self
    }
}

pub fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}
