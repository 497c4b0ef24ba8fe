//! Covariance estimation, band-pass tokenization, synthetic datasets,
//! deterministic splits and the binary tensor container.

mod container;
mod covariance;
mod filter;
mod split;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingKind;
use crate::error::Result;

pub use container::{decode_container, encode_container, read_matrix_container, write_matrix_container};
pub use covariance::{estimate_covariance, SegmentBatch, DEFAULT_RIDGE};
pub use filter::{bandpass, multiband_tokens, BandSpec};
pub use split::{split_indices, stable_hash, trial_hash, Split, SplitRatios};
pub use synth::{
    nearest_anchor_accuracy, perturb_sqrt, synth_band_mixture, synth_dataset, BandMixtureSpec, SynthDataset,
    SynthSpec,
};

/// Where a dataset lives and how it is split and tokenized. An empty band
/// list means one broadband token per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub paths: Vec<PathBuf>,
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default)]
    pub seed: u64,
    pub embedding: EmbeddingKind,
    #[serde(default)]
    pub bands: Vec<BandSpec>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        self.bands.iter().try_for_each(BandSpec::validate)
    }

    pub fn seq_len(&self) -> usize {
        self.bands.len().max(1)
    }
}
