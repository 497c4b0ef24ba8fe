use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::stats::{mean, sample_std};
use super::train::{RunReport, RunTiming};

/// Config keys allowed to differ between merged runs.
const MERGEABLE_KEYS: [&str; 1] = ["seeds"];

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub report: RunReport,
    pub timing: Option<RunTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_epoch_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub markdown: String,
    /// Long format: one line per run and epoch.
    pub curves_csv: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Run directories under `dir`: itself when it holds `metrics.json`,
/// otherwise its immediate subdirectories that do, in name order.
pub fn find_runs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("metrics.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let missing = || Error::MissingRun(dir.display().to_string());
    let mut runs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|_| missing())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.json").is_file())
        .collect();
    if runs.is_empty() {
        return Err(missing());
    }
    runs.sort();
    Ok(runs)
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let report = read_json(&dir.join("metrics.json"))?;
    let timing_path = dir.join("timing.json");
    let timing = if timing_path.is_file() { Some(read_json(&timing_path)?) } else { None };
    Ok(LoadedRun { dir: dir.to_path_buf(), report, timing })
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Dotted config keys whose values differ between any two runs.
pub fn differing_keys(runs: &[LoadedRun]) -> Result<Vec<String>> {
    let flat: Vec<BTreeMap<String, Value>> = runs
        .iter()
        .map(|r| {
            let v = serde_json::to_value(&r.report.config).map_err(|e| Error::Io(e.to_string()))?;
            let mut m = BTreeMap::new();
            flatten("", &v, &mut m);
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut keys: Vec<String> = flat.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    Ok(keys
        .into_iter()
        .filter(|k| !MERGEABLE_KEYS.contains(&k.as_str()))
        .filter(|k| flat.iter().any(|m| m.get(k) != flat[0].get(k)))
        .collect())
}

fn label(report: &RunReport) -> String {
    let c = &report.config;
    format!(
        "{} L{} H{} T{}{}",
        c.data.embedding.name(),
        c.model.layers,
        c.model.heads,
        c.model.seq_len,
        if c.model.use_bn_embed { " +BN" } else { "" }
    )
}

/// Aggregates run directories into one mean ± std row; runs whose configs
/// differ beyond their seeds are refused.
pub fn cmd_report(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::MissingRun("no run directory given".into()));
    }
    let mut runs = Vec::new();
    for d in dirs {
        for r in find_runs(d)? {
            runs.push(load_run(&r)?);
        }
    }
    let diff = differing_keys(&runs)?;
    if !diff.is_empty() {
        return Err(Error::IncompatibleRuns(diff));
    }
    let accs: Vec<f64> = runs.iter().map(|r| r.report.final_test_accuracy.unwrap_or(f64::NAN)).collect();
    let times: Vec<f64> = runs.iter().filter_map(|r| r.timing.as_ref().map(|t| t.mean_epoch_seconds)).collect();
    let row = ReportRow {
        label: label(&runs[0].report),
        runs: runs.len(),
        seeds: runs.iter().map(|r| r.report.seed).collect(),
        mean_accuracy: mean(&accs),
        std_accuracy: sample_std(&accs),
        mean_epoch_seconds: (times.len() == runs.len()).then(|| mean(&times)),
    };
    let markdown = format!(
        "| Model | Runs | Accuracy (%) | Time/Epoch (s) |\n|---|---|---|---|\n| {} | {} | {:.2} ± {:.2} | {} |\n",
        row.label,
        row.runs,
        100.0 * row.mean_accuracy,
        100.0 * row.std_accuracy,
        row.mean_epoch_seconds.map_or("n/a".into(), |s| format!("{s:.3}"))
    );
    let mut curves_csv = String::from("seed,epoch,train_loss,train_acc,val_acc,test_acc\n");
    let opt = |m: Option<super::train::SplitMetrics>| m.map_or(String::new(), |m| format!("{:.6}", m.accuracy));
    for r in &runs {
        for e in &r.report.epochs {
            curves_csv += &format!(
                "{},{},{:.6},{:.6},{},{}\n",
                r.report.seed,
                e.epoch,
                e.train_loss,
                e.train.accuracy,
                opt(e.val),
                opt(e.test)
            );
        }
    }
    Ok(Report { rows: vec![row], markdown, curves_csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SplitRatios, SynthSpec};
    use crate::embed::EmbeddingKind;
    use crate::experiment::config::{DataConfig, DataSource, ExperimentConfig, OptimizerConfig};
    use crate::experiment::prepare::BranchStats;
    use crate::experiment::train::{EpochRecord, SplitMetrics};
    use crate::nn::ModelConfig;

    fn fake_run(dir: &Path, seed: u64, acc: f64, lr: f64) {
        let m = SplitMetrics { loss: 0.5, accuracy: acc };
        let report = RunReport {
            seed,
            config: ExperimentConfig {
                model: ModelConfig::default(),
                data: DataConfig {
                    source: DataSource::Synth(SynthSpec::new(2, 3, 4, 1.0, 0.1, 0)),
                    ratios: SplitRatios::default(),
                    split_seed: 0,
                    embedding: EmbeddingKind::Bwspd,
                    bands: vec![],
                },
                optimizer: OptimizerConfig { lr, ..OptimizerConfig::default() },
                seeds: vec![seed],
            },
            param_count: 1,
            split_sizes: [1, 1, 1],
            branch: BranchStats::default(),
            epochs: vec![EpochRecord { epoch: 1, train_loss: 0.4, train: m, val: Some(m), test: Some(m) }],
            final_test_accuracy: Some(acc),
            best_val_epoch: Some(1),
        };
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join("metrics.json"), serde_json::to_string(&report).unwrap()).unwrap();
        let timing = RunTiming { seed, epoch_seconds: vec![2.0], mean_epoch_seconds: 2.0 };
        std::fs::write(dir.join("timing.json"), serde_json::to_string(&timing).unwrap()).unwrap();
    }

    #[test]
    fn single_run_single_row() {
        let dir = tempfile::tempdir().unwrap();
        fake_run(dir.path(), 1, 0.9, 1e-3);
        let r = cmd_report(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].std_accuracy, 0.0);
        assert!(r.markdown.contains("90.00 ± 0.00"));
        assert_eq!(r.curves_csv.lines().count(), 2);
    }

    #[test]
    fn five_seeds_use_sample_std() {
        let dir = tempfile::tempdir().unwrap();
        let accs = [0.9, 0.92, 0.88, 0.95, 0.91];
        for (i, &a) in accs.iter().enumerate() {
            fake_run(&dir.path().join(format!("seed-{i}")), i as u64, a, 1e-3);
        }
        let r = cmd_report(&[dir.path().to_path_buf()]).unwrap();
        let m = accs.iter().sum::<f64>() / 5.0;
        let s = (accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 4.0).sqrt();
        assert_eq!(r.rows[0].runs, 5);
        assert!((r.rows[0].std_accuracy - s).abs() < 1e-15);
        assert_eq!(r.rows[0].mean_epoch_seconds, Some(2.0));
    }

    #[test]
    fn refuses_mixed_configs() {
        let dir = tempfile::tempdir().unwrap();
        fake_run(&dir.path().join("a"), 1, 0.9, 1e-3);
        fake_run(&dir.path().join("b"), 2, 0.9, 1e-2);
        match cmd_report(&[dir.path().to_path_buf()]) {
            Err(Error::IncompatibleRuns(keys)) => assert_eq!(keys, vec!["optimizer.lr".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_run() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_report(&[dir.path().join("nope")]), Err(Error::MissingRun(_))));
        assert!(matches!(cmd_report(&[dir.path().to_path_buf()]), Err(Error::MissingRun(_))));
    }
}
