use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::BandSpec;
use crate::embed::EmbeddingKind;
use crate::error::{Error, Result};
use crate::nn::AttentionMode;

use super::config::{DataSource, ExperimentConfig};
use super::prepare::prepare;
use super::stats::{mean, paired_t_test, sample_std};
use super::train::train_all;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Embedding,
    BnEmbed,
    Depth,
    Heads,
    Attention,
    Bands,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Embedding,
        AblationAxis::BnEmbed,
        AblationAxis::Depth,
        AblationAxis::Heads,
        AblationAxis::Attention,
        AblationAxis::Bands,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Embedding => "embedding",
            AblationAxis::BnEmbed => "bn_embed",
            AblationAxis::Depth => "depth",
            AblationAxis::Heads => "heads",
            AblationAxis::Attention => "attention",
            AblationAxis::Bands => "bands",
        }
    }
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation axis {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

fn band_rate(base: &ExperimentConfig) -> Result<f64> {
    if let Some(b) = base.data.bands.first() {
        return Ok(b.sample_rate_hz);
    }
    match &base.data.source {
        DataSource::BandMixture(spec) => Ok(spec.sample_rate_hz),
        DataSource::Synth(_) => Err(Error::InvalidConfig("bands axis needs segment data".into())),
        DataSource::Files { .. } => Err(Error::InvalidConfig("bands axis needs bands in the base config".into())),
    }
}

/// Variants along `axis`; the first is the reference for p-values.
pub fn variants(base: &ExperimentConfig, axis: AblationAxis) -> Result<Vec<Variant>> {
    let with = |name: String, edit: &dyn Fn(&mut ExperimentConfig)| {
        let mut config = base.clone();
        edit(&mut config);
        Variant { name, config }
    };
    Ok(match axis {
        AblationAxis::Embedding => EmbeddingKind::ALL
            .into_iter()
            .map(|k| with(k.name().into(), &|c| c.data.embedding = k))
            .collect(),
        AblationAxis::BnEmbed => vec![
            with("with_bn".into(), &|c| c.model.use_bn_embed = true),
            with("without_bn".into(), &|c| c.model.use_bn_embed = false),
        ],
        AblationAxis::Depth => [2, 4, 6, 8]
            .into_iter()
            .map(|l| with(format!("layers_{l}"), &|c| c.model.layers = l))
            .collect(),
        AblationAxis::Heads => [4, 8, 16]
            .into_iter()
            .map(|h| with(format!("heads_{h}"), &|c| c.model.heads = h))
            .collect(),
        AblationAxis::Attention => vec![
            with("standard".into(), &|c| c.model.attention = AttentionMode::Standard),
            with("geometric".into(), &|c| c.model.attention = AttentionMode::GeometricAware { alpha: 0.5 }),
        ],
        AblationAxis::Bands => {
            let triplet = BandSpec::standard_triplet(band_rate(base)?)?;
            vec![
                with("t1_broadband".into(), &|c| c.data.bands.clear()),
                with("t3_mu_beta_gamma".into(), &|c| c.data.bands = triplet.clone()),
            ]
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Variant minus reference, paired by seed; `None` for the reference.
    pub mean_diff: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mean,std,mean_diff,p_value,accuracies\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.6}")).collect();
            out += &format!(
                "{},{:.6},{:.6},{},{},{}\n",
                r.variant,
                r.mean,
                r.std,
                opt(r.mean_diff),
                opt(r.p_value),
                accs.join(";")
            );
        }
        out
    }
}

/// Final test accuracies of every seed for each variant.
pub fn run_variants(variants: &[Variant]) -> Result<Vec<Vec<f64>>> {
    variants
        .iter()
        .map(|v| {
            v.config.validate()?;
            let data = prepare(&v.config.data)?;
            let runs = train_all(&v.config, &data)?;
            runs.iter()
                .map(|r| {
                    r.report
                        .final_test_accuracy
                        .ok_or_else(|| Error::InvalidSpec("test split is empty".into()))
                })
                .collect()
        })
        .collect()
}

pub fn tabulate(axis: AblationAxis, seeds: &[u64], names: &[String], accuracies: &[Vec<f64>]) -> Result<AblationTable> {
    let reference = &accuracies[0];
    let rows = names
        .iter()
        .zip(accuracies)
        .enumerate()
        .map(|(i, (name, accs))| {
            let test = if i == 0 { None } else { Some(paired_t_test(accs, reference)?) };
            Ok(AblationRow {
                variant: name.clone(),
                accuracies: accs.clone(),
                mean: mean(accs),
                std: sample_std(accs),
                mean_diff: test.map(|t| t.mean_diff),
                p_value: test.map(|t| t.p_value),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable { axis, seeds: seeds.to_vec(), rows })
}

/// Trains every variant on every seed and writes `ablation_<axis>.csv` and
/// `.json` into `out_dir`.
pub fn cmd_ablate(base: &ExperimentConfig, axis: AblationAxis, out_dir: Option<&Path>) -> Result<AblationTable> {
    base.validate()?;
    if base.seeds.len() < 2 {
        return Err(Error::InvalidConfig("ablation needs at least two seeds for paired tests".into()));
    }
    let vs = variants(base, axis)?;
    let accs = run_variants(&vs)?;
    let names: Vec<String> = vs.iter().map(|v| v.name.clone()).collect();
    let table = tabulate(axis, &base.seeds, &names, &accs)?;
    if let Some(dir) = out_dir {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let stem = format!("ablation_{}", axis.name());
        std::fs::write(dir.join(format!("{stem}.csv")), table.to_csv()).map_err(io)?;
        let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n").map_err(io)?;
    }
    Ok(table)
}
