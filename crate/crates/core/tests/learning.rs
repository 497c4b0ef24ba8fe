//! End-to-end training comparisons. Each test trains five seeds for fifty
//! epochs, so these dominate the workspace test time.

use spdtok::data::{SplitRatios, SynthSpec};
use spdtok::embed::EmbeddingKind;
use spdtok::experiment::{cmd_train, DataConfig, DataSource, ExperimentConfig, OptimizerConfig, DEFAULT_SEEDS};
use spdtok::nn::ModelConfig;

fn jittered(embedding: EmbeddingKind) -> ExperimentConfig {
    let mut spec = SynthSpec::new(4, 22, 60, 2.0, 0.05, 7);
    spec.scale_jitter = 10.0;
    ExperimentConfig {
        model: ModelConfig::default(),
        data: DataConfig {
            source: DataSource::Synth(spec),
            ratios: SplitRatios::default(),
            split_seed: 0,
            embedding,
            bands: vec![],
        },
        optimizer: OptimizerConfig::default(),
        seeds: DEFAULT_SEEDS.to_vec(),
    }
}

// Per-trial scale jitter is an additive shift in log space but a
// multiplicative one on raw entries, so only the Euclidean tokens suffer.
#[test]
fn log_euclidean_beats_euclidean_under_scale_jitter() {
    let (log, _) = cmd_train(&jittered(EmbeddingKind::LogEuclidean), None).unwrap();
    let (euc, _) = cmd_train(&jittered(EmbeddingKind::Euclidean), None).unwrap();
    let gap = 100.0 * (log.mean_test_accuracy - euc.mean_test_accuracy);
    println!(
        "log-euclidean {:?} vs euclidean {:?}: gap {gap:.1} pts",
        log.test_accuracies, euc.test_accuracies
    );
    assert!(gap >= 5.0, "gap {gap:.1} pts");
}
