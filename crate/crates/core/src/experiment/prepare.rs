use serde::{Deserialize, Serialize};

use crate::data::{
    estimate_covariance, multiband_tokens, read_matrix_container, split_indices, synth_band_mixture, synth_dataset,
    trial_hash, SegmentBatch, Split, DEFAULT_RIDGE,
};
use crate::embed::{embed_with_eig, token_len, EmbeddingKind};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::Tensor;
use crate::spd::{dk_matrix, SpdMatrix, DEFAULT_CLIP, DEFAULT_DEGENERACY_TOL};

use super::config::{DataConfig, DataSource};

/// Taylor-branch usage of the Daleckiĭ–Kreĭn matrices of every input matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchStats {
    pub taylor_hits: usize,
    pub pairs: usize,
}

/// Tokenized trials with a fixed split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// `seq_len · token_dim` values per trial.
    pub tokens: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub seq_len: usize,
    pub token_dim: usize,
    pub n_classes: usize,
    pub split: Split,
    pub branch: BranchStats,
}

impl PreparedData {
    /// `[idx.len(), seq_len, token_dim]` tensor and matching labels.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * self.seq_len * self.token_dim);
        for &i in idx {
            data.extend_from_slice(&self.tokens[i]);
        }
        (
            Tensor::new(vec![idx.len(), self.seq_len, self.token_dim], data),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

fn embed_counting(c: &SpdMatrix, kind: EmbeddingKind, branch: &mut BranchStats) -> Result<Vec<f64>> {
    let (token, eig) = embed_with_eig(c, kind)?;
    if let Some(eig) = eig {
        let dk = dk_matrix(&eig.clipped(DEFAULT_CLIP).values, kind.spectral_fn(), DEFAULT_DEGENERACY_TOL)?;
        branch.taylor_hits += dk.taylor_hits;
        branch.pairs += dk.pair_count();
    }
    Ok(token.values)
}

fn segment_tokens(batch: &SegmentBatch, cfg: &DataConfig, branch: &mut BranchStats) -> Result<Vec<Vec<f64>>> {
    batch
        .data
        .iter()
        .map(|x| {
            if cfg.bands.is_empty() {
                embed_counting(&estimate_covariance(x, DEFAULT_RIDGE)?, cfg.embedding, branch)
            } else {
                if let Some(b) = cfg.bands.iter().find(|b| b.sample_rate_hz != batch.sample_rate_hz) {
                    return Err(Error::InvalidConfig(format!(
                        "band {} at {} Hz but data sampled at {} Hz",
                        b.name, b.sample_rate_hz, batch.sample_rate_hz
                    )));
                }
                let toks = multiband_tokens(x, &cfg.bands, cfg.embedding)?;
                Ok(toks.into_iter().flat_map(|t| t.values).collect())
            }
        })
        .collect()
}

fn labels_from(t: &Tensor, n: usize) -> Result<Vec<usize>> {
    if t.len() != n {
        return Err(Error::DimMismatch { expected: n, got: t.len() });
    }
    t.data
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidSpec(format!("label {v} is not a non-negative integer")))
            }
        })
        .collect()
}

fn load_files(paths: &[std::path::PathBuf], cfg: &DataConfig, branch: &mut BranchStats) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let entries = read_matrix_container(path)?;
        let get = |name: &str| entries.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let missing = |name: &str| Error::InvalidSpec(format!("{}: missing entry {name}", path.display()));
        if let Some(cov) = get("covariances") {
            if !cfg.bands.is_empty() {
                return Err(Error::InvalidConfig("bands need segment data, found covariances".into()));
            }
            let [n, d, d2] = cov.shape[..] else {
                return Err(Error::ShapeMismatch { op: "load", detail: format!("covariances {:?}", cov.shape) });
            };
            if d != d2 {
                return Err(Error::ShapeMismatch { op: "load", detail: format!("covariances {:?}", cov.shape) });
            }
            labels.extend(labels_from(get("labels").ok_or_else(|| missing("labels"))?, n)?);
            for m in cov.data.chunks(d * d) {
                let c = SpdMatrix::new(Mat::from_vec(d, d, m.to_vec()))?;
                tokens.push(embed_counting(&c, cfg.embedding, branch)?);
            }
        } else if let Some(seg) = get("segments") {
            let [n, c, t] = seg.shape[..] else {
                return Err(Error::ShapeMismatch { op: "load", detail: format!("segments {:?}", seg.shape) });
            };
            let rate = get("sample_rate").and_then(|r| r.data.first().copied()).ok_or_else(|| missing("sample_rate"))?;
            let file_labels = labels_from(get("labels").ok_or_else(|| missing("labels"))?, n)?;
            let data = seg.data.chunks(c * t).map(|m| Mat::from_vec(c, t, m.to_vec())).collect();
            let batch = SegmentBatch::new(rate, data, file_labels.clone())?;
            tokens.extend(segment_tokens(&batch, cfg, branch)?);
            labels.extend(file_labels);
        } else {
            return Err(missing("covariances or segments"));
        }
    }
    Ok((tokens, labels))
}

pub fn prepare(cfg: &DataConfig) -> Result<PreparedData> {
    let mut branch = BranchStats::default();
    let (tokens, labels) = match &cfg.source {
        DataSource::Synth(spec) => {
            if !cfg.bands.is_empty() {
                return Err(Error::InvalidConfig("bands need segment data; synth produces matrices".into()));
            }
            let ds = synth_dataset(spec)?;
            let tokens = ds
                .samples
                .iter()
                .map(|c| embed_counting(c, cfg.embedding, &mut branch))
                .collect::<Result<Vec<_>>>()?;
            (tokens, ds.labels)
        }
        DataSource::BandMixture(spec) => {
            let batch = synth_band_mixture(spec)?;
            (segment_tokens(&batch, cfg, &mut branch)?, batch.labels)
        }
        DataSource::Files { paths } => load_files(paths, cfg, &mut branch)?,
    };
    if tokens.is_empty() {
        return Err(Error::InvalidSpec("dataset is empty".into()));
    }
    let seq_len = cfg.bands.len().max(1);
    let token_dim = tokens[0].len() / seq_len;
    if tokens.iter().any(|t| t.len() != seq_len * token_dim) || crate::embed::source_dim(token_dim).map(token_len) != Some(token_dim) {
        return Err(Error::InvalidSpec("trials have inconsistent token lengths".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let hashes: Vec<u64> = tokens.iter().zip(&labels).map(|(t, &l)| trial_hash(t, l)).collect();
    let split = split_indices(&hashes, &labels, cfg.ratios, cfg.split_seed)?;
    if split.train.is_empty() {
        return Err(Error::InvalidSpec("training split is empty".into()));
    }
    Ok(PreparedData { tokens, labels, seq_len, token_dim, n_classes, split, branch })
}
