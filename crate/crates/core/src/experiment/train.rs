use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_matrix_container, write_matrix_container};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Tape, Tensor, Transformer};
use crate::random::Rng64;

use super::config::ExperimentConfig;
use super::prepare::{prepare, BranchStats, PreparedData};
use super::stats::{mean, sample_std};

/// Entry-name prefix that carries the run configuration inside checkpoints.
pub const CONFIG_ENTRY_PREFIX: &str = "#config ";
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss in train mode.
    pub train_loss: f64,
    pub train: SplitMetrics,
    pub val: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

/// Deterministic outcome of one seed; contains no wall-clock values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    /// Configuration echo with data-derived model dimensions filled in.
    pub config: ExperimentConfig,
    pub param_count: usize,
    pub split_sizes: [usize; 3],
    pub branch: BranchStats,
    pub epochs: Vec<EpochRecord>,
    pub final_test_accuracy: Option<f64>,
    pub best_val_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub seed: u64,
    pub epoch_seconds: Vec<f64>,
    pub mean_epoch_seconds: f64,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub timing: RunTiming,
    pub model: Transformer,
    /// Weights at the epoch with the best validation accuracy.
    pub best: Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seeds: Vec<u64>,
    pub test_accuracies: Vec<f64>,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
}

/// Config with `token_dim`, `seq_len` and `n_classes` taken from `data`.
pub fn resolve_config(config: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentConfig> {
    let mut cfg = config.clone();
    cfg.model.token_dim = data.token_dim;
    cfg.model.seq_len = data.seq_len;
    cfg.model.n_classes = data.n_classes;
    cfg.model.validate()?;
    Ok(cfg)
}

/// Minibatches of `order`; a trailing batch of one row is folded into the
/// previous batch because BN-Embed needs at least two rows.
pub fn minibatches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size.max(1)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Eval-mode mean loss and accuracy over `idx`; `None` when `idx` is empty.
pub fn evaluate(model: &Transformer, data: &PreparedData, idx: &[usize]) -> Result<Option<SplitMetrics>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (tokens, labels) = data.batch(chunk);
        let logits = model.logits(&tokens)?;
        let c = logits.shape[1];
        correct += logits
            .data
            .chunks(c)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        let mut tape = Tape::new();
        let lv = tape.leaf(logits);
        let ce = tape.cross_entropy(lv, &labels)?;
        loss += tape.value(ce).data[0] * chunk.len() as f64;
    }
    Ok(Some(SplitMetrics { loss: loss / idx.len() as f64, accuracy: correct as f64 / idx.len() as f64 }))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains one model; all randomness derives from `seed`.
pub fn train_seed(config: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<RunOutcome> {
    let config = resolve_config(config, data)?;
    let mut model = Transformer::new(config.model.clone(), config.data.embedding, derive_seed(seed, 1))?;
    let mut adam = AdamState::new(AdamConfig { lr: config.optimizer.lr, ..AdamConfig::default() }, &model.params);
    let mut shuffle_rng = Rng64::seed_from_u64(derive_seed(seed, 2));
    let mut dropout_rng = Rng64::seed_from_u64(derive_seed(seed, 3));

    let split = &data.split;
    let mut order = split.train.clone();
    let mut epochs = Vec::with_capacity(config.optimizer.epochs);
    let mut epoch_seconds = Vec::with_capacity(config.optimizer.epochs);
    let mut best = (None::<f64>, model.clone(), None::<usize>);
    for epoch in 1..=config.optimizer.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let batches = minibatches(&order, config.optimizer.batch_size);
        for b in &batches {
            let (tokens, labels) = data.batch(b);
            loss_sum += model.train_step(&tokens, &labels, &mut adam, &mut dropout_rng)?;
        }
        epoch_seconds.push(start.elapsed().as_secs_f64());
        let train_loss = loss_sum / batches.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss,
            train: evaluate(&model, data, &split.train)?.expect("train split is non-empty"),
            val: evaluate(&model, data, &split.val)?,
            test: evaluate(&model, data, &split.test)?,
        };
        let score = record.val.unwrap_or(record.train).accuracy;
        if best.0.is_none_or(|b| score > b) {
            best = (Some(score), model.clone(), Some(epoch));
        }
        log::debug!("seed {seed} epoch {epoch}: loss {train_loss:.4} train acc {:.3}", record.train.accuracy);
        epochs.push(record);
    }
    let mean_epoch_seconds = mean(&epoch_seconds);
    let report = RunReport {
        seed,
        param_count: model.param_count(),
        split_sizes: [split.train.len(), split.val.len(), split.test.len()],
        branch: data.branch,
        final_test_accuracy: epochs.last().and_then(|e| e.test.map(|m| m.accuracy)),
        best_val_epoch: best.2,
        epochs,
        config,
    };
    Ok(RunOutcome { report, timing: RunTiming { seed, epoch_seconds, mean_epoch_seconds }, model, best: best.1 })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn save_checkpoint(path: &Path, config: &ExperimentConfig, model: &Transformer) -> Result<()> {
    let header = serde_json::to_string(config).map_err(|e| io_err(path, e))?;
    let mut entries = vec![(format!("{CONFIG_ENTRY_PREFIX}{header}"), Tensor::zeros(vec![0]))];
    entries.extend(model.named_tensors());
    write_matrix_container(path, &entries)
}

/// Rebuilds a model from a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ExperimentConfig, Transformer)> {
    let entries = read_matrix_container(path)?;
    let (first, rest) = entries.split_first().ok_or(Error::TruncatedFile)?;
    let json = first
        .0
        .strip_prefix(CONFIG_ENTRY_PREFIX)
        .ok_or_else(|| Error::InvalidConfig("checkpoint has no config entry".into()))?;
    let config: ExperimentConfig = serde_json::from_str(json).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut model = Transformer::new(config.model.clone(), config.data.embedding, 0)?;
    model.load_named(rest)?;
    Ok((config, model))
}

/// Writes `metrics.json`, `timing.json`, `epochs.csv` and both checkpoints.
pub fn write_run(dir: &Path, run: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("metrics.json"), &run.report)?;
    write_json(&dir.join("timing.json"), &run.timing)?;
    let opt = |m: Option<SplitMetrics>, f: fn(SplitMetrics) -> f64| m.map_or(String::new(), |m| format!("{:.6}", f(m)));
    let mut csv = String::from("epoch,train_loss,train_acc,val_loss,val_acc,test_loss,test_acc,seconds\n");
    for (e, s) in run.report.epochs.iter().zip(&run.timing.epoch_seconds) {
        csv += &format!(
            "{},{:.6},{:.6},{},{},{},{},{:.4}\n",
            e.epoch,
            e.train_loss,
            e.train.accuracy,
            opt(e.val, |m| m.loss),
            opt(e.val, |m| m.accuracy),
            opt(e.test, |m| m.loss),
            opt(e.test, |m| m.accuracy),
            s
        );
    }
    let csv_path = dir.join("epochs.csv");
    std::fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    save_checkpoint(&dir.join("checkpoint.spdt"), &run.report.config, &run.model)?;
    save_checkpoint(&dir.join("checkpoint_best.spdt"), &run.report.config, &run.best)
}

pub fn summarize(reports: &[RunReport]) -> TrainSummary {
    let test_accuracies: Vec<f64> = reports.iter().map(|r| r.final_test_accuracy.unwrap_or(f64::NAN)).collect();
    TrainSummary {
        seeds: reports.iter().map(|r| r.seed).collect(),
        mean_test_accuracy: mean(&test_accuracies),
        std_test_accuracy: sample_std(&test_accuracies),
        test_accuracies,
    }
}

/// Runs every configured seed on `data`, in parallel across seeds.
pub fn train_all(config: &ExperimentConfig, data: &PreparedData) -> Result<Vec<RunOutcome>> {
    config.validate()?;
    config.seeds.par_iter().map(|&s| train_seed(config, data, s)).collect()
}

/// Prepares data, trains all seeds and, with `out_dir`, writes one
/// `seed-<n>` directory per run plus `summary.json`.
pub fn cmd_train(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<(TrainSummary, Vec<RunOutcome>)> {
    config.validate()?;
    let data = prepare(&config.data)?;
    let runs = train_all(config, &data)?;
    let reports: Vec<RunReport> = runs.iter().map(|r| r.report.clone()).collect();
    let summary = summarize(&reports);
    if let Some(dir) = out_dir {
        for run in &runs {
            write_run(&dir.join(format!("seed-{}", run.report.seed)), run)?;
        }
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok((summary, runs))
}
