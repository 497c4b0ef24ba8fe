use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use spdtok::experiment::{
    cmd_ablate, cmd_bench, cmd_report, cmd_train, cmd_verify, AblationAxis, ExperimentConfig, VerifyOptions, SEED_ENV,
};

#[derive(Parser)]
#[command(name = "spdtok", version, about = "SPD token Transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the property suites; exits nonzero if any property fails.
    Verify {
        /// Run only this suite.
        #[arg(long)]
        filter: Option<String>,
        /// Also write the JSON summary here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train every seed of a config and write one directory per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Compare variants along one axis with paired t-tests.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// embedding, bn_embed, depth, heads, attention or bands.
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long, default_value = "ablations")]
        out: PathBuf,
    },
    /// Time square-root and logarithm forward/backward passes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "2,8,22,56")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate run directories into a markdown table and curves CSV.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write report.md and curves.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    cfg.override_seeds(std::env::var(SEED_ENV).ok().as_deref())?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { filter, json } => {
            let report = cmd_verify(filter.as_deref(), &VerifyOptions::default())?;
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(path) = json {
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("{text}");
            for s in &report.suites {
                eprintln!("{} {}", if s.passed { "PASS" } else { "FAIL" }, s.name);
            }
            return Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let (summary, _) = cmd_train(&cfg, Some(&out))?;
            for (seed, acc) in summary.seeds.iter().zip(&summary.test_accuracies) {
                println!("seed {seed}: final test accuracy {:.4}", acc);
            }
            println!(
                "mean ± std: {:.2} ± {:.2} % ({} seeds) -> {}",
                100.0 * summary.mean_test_accuracy,
                100.0 * summary.std_test_accuracy,
                summary.seeds.len(),
                out.display()
            );
        }
        Command::Ablate { config, axis, out } => {
            let cfg = load_config(&config)?;
            let table = cmd_ablate(&cfg, axis, Some(&out))?;
            print!("{}", table.to_csv());
        }
        Command::Bench { dims, trials, seed } => {
            let table = cmd_bench(&dims, trials, seed)?;
            print!("{}", table.to_csv());
            for (d, r) in &table.grad_time_ratio {
                println!("d={d}: T_grad(log)/T_grad(sqrt) = {r:.3}");
            }
        }
        Command::Report { dirs, out } => {
            let report = cmd_report(&dirs)?;
            print!("{}", report.markdown);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("report.md"), &report.markdown)?;
                std::fs::write(dir.join("curves.csv"), &report.curves_csv)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
