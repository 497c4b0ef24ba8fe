//! Training, ablation, timing, reporting and verification workflows.

mod ablate;
mod bench;
mod config;
mod prepare;
mod report;
mod stats;
mod train;
mod verify;

pub use ablate::{cmd_ablate, run_variants, tabulate, variants, AblationAxis, AblationRow, AblationTable, Variant};
pub use bench::{clustered_spectrum, cmd_bench, BenchRow, BenchTable};
pub use config::{DataConfig, DataSource, ExperimentConfig, OptimizerConfig, DEFAULT_SEEDS, SEED_ENV};
pub use prepare::{prepare, BranchStats, PreparedData};
pub use report::{cmd_report, differing_keys, find_runs, load_run, LoadedRun, Report, ReportRow};
pub use stats::{mean, paired_t_test, sample_std, TTest};
pub use train::{
    cmd_train, evaluate, load_checkpoint, minibatches, resolve_config, save_checkpoint, summarize, train_all,
    train_seed, write_run, EpochRecord, RunOutcome, RunReport, RunTiming, SplitMetrics, TrainSummary,
    CONFIG_ENTRY_PREFIX,
};
pub use verify::{
    clustered_batch, cmd_verify, fixed_point_residual, joint_condition, log_log_slope, suite_names, PropertyResult,
    SuiteResult, VerifyOptions, VerifyReport, SUITES,
};
