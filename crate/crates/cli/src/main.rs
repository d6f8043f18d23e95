//! `siim` — dataset generation, ensemble training, gated serving runs, and
//! report emission for the self-improving power-control workbench.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use siim_core::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "siim", version, about = "Self-improving interference management workbench")]
struct Cli {
    /// JSON experiment configuration; defaults apply for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for dataset generation and member training.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate labeled training (topology A) and test (A+B) datasets.
    GenData,
    /// Train a deep ensemble on a labeled JSON-lines dataset.
    Train {
        /// Labeled dataset produced by `gen-data`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Serve the configured request stream with the credibility gate and
    /// emit the full metrics report.
    Run {
        /// Trained ensemble file.
        #[arg(long)]
        ensemble: PathBuf,
        /// Base dataset for retraining rounds; regenerated from the config
        /// when omitted.
        #[arg(long)]
        train_data: Option<PathBuf>,
    },
    /// Render a previously written report and regenerate its CSV tables.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
    /// Evaluate gate sensitivity across criterion thresholds.
    SweepEps {
        #[arg(long)]
        ensemble: PathBuf,
        /// Comma-separated threshold list; defaults to the config's sweep.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Drive retraining rounds and report per-round behavior.
    SweepRounds {
        #[arg(long)]
        ensemble: PathBuf,
        /// Base dataset for retraining; regenerated when omitted.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Retraining rounds to complete before stopping.
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        /// Override the config's enhanced-sample threshold.
        #[arg(long)]
        n_si: Option<usize>,
        /// Hard cap on served requests.
        #[arg(long, default_value_t = 25_000)]
        max_requests: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("config: failed to load {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("thread pool: failed to initialize")?;
    }
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("output: cannot create {}", cfg.output_dir.display()))?;

    match cli.cmd {
        Cmd::GenData => commands::gen_data(&cfg).context("gen-data failed"),
        Cmd::Train { data } => commands::train(&cfg, &data).context("train failed"),
        Cmd::Run { ensemble, train_data } => {
            commands::run(&cfg, &ensemble, train_data.as_deref()).context("run failed")
        }
        Cmd::Report { report } => commands::report(&cfg, &report).context("report failed"),
        Cmd::SweepEps { ensemble, eps } => {
            commands::sweep_eps(&cfg, &ensemble, eps).context("sweep-eps failed")
        }
        Cmd::SweepRounds { ensemble, train_data, rounds, n_si, max_requests } => {
            commands::sweep_rounds(&cfg, &ensemble, train_data.as_deref(), rounds, n_si, max_requests)
                .context("sweep-rounds failed")
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
