//! Experiment CLI: train, ablate, and sweep over flat config files.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime/numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hyperdual::config::{ExperimentConfig, RunMode};
use hyperdual::runner::{self, SweepParam};
use hyperdual::Error;

#[derive(Parser)]
#[command(
    name = "hyperdual",
    version,
    about = "Hypergraph structure learning + density-aware attention experiments",
    after_help = "Config files are flat `key = value` text; every key has a default except \
                  `dataset`, `train_count` and `val_count`. Flag overrides take precedence \
                  over config-file values, which take precedence over defaults. Set \
                  HYPERDUAL_THREADS=1 to cap worker parallelism (runs are deterministic \
                  either way)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for metrics/summary CSVs and config.resolved.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Worker pool size for repeat runs and sweep points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Master seed (runs use seed, seed+1, ...).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of repeat runs to average over.
    #[arg(long)]
    repeats: Option<usize>,
    /// Number of labeled training samples (alias for train_count).
    #[arg(long)]
    labels: Option<usize>,
    /// Dataset kind override: synth|mnist|table.
    #[arg(long)]
    dataset: Option<String>,
    /// Trade-off between structure loss and classification loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Blend weight between learned and original hypergraphs.
    #[arg(long)]
    eta: Option<f64>,
    /// Similarity threshold for hypergraph sparsification.
    #[arg(long)]
    delta1: Option<f64>,
    /// Similarity threshold for the density rule.
    #[arg(long)]
    delta2: Option<f64>,
    /// Number of similarity views.
    #[arg(long)]
    views: Option<usize>,
    /// Attention heads in the first layer.
    #[arg(long)]
    heads: Option<usize>,
    /// Hidden width per attention head.
    #[arg(long)]
    hidden: Option<usize>,
    /// k for the original k-NN hypergraph.
    #[arg(long)]
    k: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("repeats", self.repeats.map(|v| v.to_string()));
        push("train_count", self.labels.map(|v| v.to_string()));
        push("dataset", self.dataset.clone());
        push("lambda", self.lambda.map(|v| v.to_string()));
        push("eta", self.eta.map(|v| v.to_string()));
        push("delta1", self.delta1.map(|v| v.to_string()));
        push("delta2", self.delta2.map(|v| v.to_string()));
        push("views", self.views.map(|v| v.to_string()));
        push("heads", self.heads.map(|v| v.to_string()));
        push("hidden", self.hidden.map(|v| v.to_string()));
        push("k", self.k.map(|v| v.to_string()));
        out
    }

    fn load(&self) -> Result<ExperimentConfig, Error> {
        ExperimentConfig::load(&self.config, &self.overrides())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the full model over repeated seeded runs.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one pipeline variant (full, no-hgl, no-density) for comparison.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Pipeline variant to run.
        #[arg(long)]
        mode: String,
    },
    /// Re-run the experiment across values of one hyperparameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter to vary: lambda|views|delta1|eta.
        #[arg(long)]
        param: String,
        /// Comma-separated list of values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common } => {
            let cfg = common.load()?;
            let line = runner::cmd_train(&cfg, &common.out_dir, common.jobs)?;
            println!("test accuracy (mean\u{b1}std over {} runs): {line}", cfg.repeats);
        }
        Command::Ablate { common, mode } => {
            let mode: RunMode = mode.parse()?;
            let cfg = common.load()?;
            let line = runner::cmd_ablate(&cfg, mode, &common.out_dir, common.jobs)?;
            println!(
                "[{mode}] test accuracy (mean\u{b1}std over {} runs): {line}",
                cfg.repeats
            );
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let param: SweepParam = param.parse()?;
            let cfg = common.load()?;
            let path = runner::cmd_sweep(&cfg, param, &values, &common.out_dir, common.jobs)?;
            println!("sweep results written to {path}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
