use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BandMixtureSpec, BandSpec, DatasetManifest, SplitRatios, SynthSpec};
use crate::embed::EmbeddingKind;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;

pub const DEFAULT_SEEDS: [u64; 5] = [42, 123, 456, 789, 1024];

/// Environment variable holding a comma-separated seed list that replaces
/// the configured seeds.
pub const SEED_ENV: &str = "SPDTOK_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// SPD matrices drawn around separated anchors.
    Synth(SynthSpec),
    /// Multichannel segments whose class lives in band-specific patterns.
    BandMixture(BandMixtureSpec),
    /// Matrix containers holding either `covariances` `[n, d, d]` or
    /// `segments` `[n, C, T]` plus `sample_rate` `[1]`, and `labels` `[n]`.
    Files { paths: Vec<PathBuf> },
}

fn default_embedding() -> EmbeddingKind {
    EmbeddingKind::LogEuclidean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_embedding")]
    pub embedding: EmbeddingKind,
    /// Empty means one broadband token per trial.
    #[serde(default)]
    pub bands: Vec<BandSpec>,
}

impl From<DatasetManifest> for DataConfig {
    fn from(m: DatasetManifest) -> Self {
        Self {
            source: DataSource::Files { paths: m.paths },
            ratios: m.ratios,
            split_seed: m.seed,
            embedding: m.embedding,
            bands: m.bands,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch_size: 64, epochs: 50 }
    }
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

/// Model, data, optimizer and seeds. `model.token_dim`, `model.seq_len`
/// and `model.n_classes` are overwritten from the prepared data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.optimizer.epochs == 0 || self.optimizer.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be > 0", self.optimizer.lr)));
        }
        self.data.ratios.validate()?;
        self.data.bands.iter().try_for_each(BandSpec::validate)
    }

    /// Replaces the seed list when `value` is a comma-separated list.
    pub fn override_seeds(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value.map(str::trim).filter(|v| !v.is_empty()) {
            self.seeds = v
                .split(',')
                .map(|s| s.trim().parse::<u64>().map_err(|_| Error::InvalidConfig(format!("bad seed {s:?} in {SEED_ENV}"))))
                .collect::<Result<_>>()?;
        }
        Ok(())
    }
}
