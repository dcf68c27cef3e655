use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cim_cli::cmd::{self, sweep};
use cim_cli::config::{ExperimentConfig, ENV_THREADS};
use cim_cli::{ErrorRecord, RunDir};
use clap::{Parser, Subcommand};

/// Device-to-network simulator for a 3D stacked RRAM compute-in-memory tile.
#[derive(Parser)]
#[command(name = "cimsim", version)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// TFT transfer curves or the RRAM hysteresis loop as `V,I` CSV.
    IvSweep {
        #[arg(long, value_enum)]
        device: sweep::Device,
        #[command(flatten)]
        range: sweep::SweepArgs,
    },
    /// Distinguishable RRAM states over the configured sigma grid.
    States,
    /// One tile read with and without wire resistance.
    Mac {
        /// Weight file, `row,col,layer,level` CSV.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Stimulus file (TOML).
        #[arg(long)]
        stimulus: Option<PathBuf>,
    },
    /// Train the configured network.
    Train,
    /// Analog and software inference of a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Channel pruning of a checkpoint.
    Prune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Download dataset files and verify their checksums.
    Fetch {
        /// File list (TOML); overrides `fetch.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Summarize finished runs into one CSV.
    Report {
        /// Run directories; the configured output directory when omitted.
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::IvSweep { .. } => "iv-sweep",
            Command::States => "states",
            Command::Mac { .. } => "mac",
            Command::Train => "train",
            Command::Infer { .. } => "infer",
            Command::Prune { .. } => "prune",
            Command::Fetch { .. } => "fetch",
            Command::Report { .. } => "report",
        }
    }
}

fn set_threads() -> Result<()> {
    if let Ok(v) = std::env::var(ENV_THREADS) {
        let n: usize = v
            .parse()
            .map_err(|_| cim_cli::CliError::config(format!("{ENV_THREADS}={v} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn execute(cfg: &mut ExperimentConfig, command: &Command) -> Result<()> {
    match command {
        Command::IvSweep { device, range } => sweep::run(cfg, *device, range)?,
        Command::States => cmd::states::run(cfg)?,
        Command::Mac { weights, stimulus } => {
            cfg.mac.weights = weights.clone().or(cfg.mac.weights.take());
            cfg.mac.stimulus = stimulus.clone().or(cfg.mac.stimulus.take());
            cmd::mac::run(cfg)?
        }
        Command::Train => cmd::nn::train(cfg)?,
        Command::Infer { checkpoint } => {
            cfg.infer.checkpoint = checkpoint.clone().or(cfg.infer.checkpoint.take());
            cmd::nn::infer_cmd(cfg)?
        }
        Command::Prune { checkpoint } => {
            cfg.prune.checkpoint = checkpoint.clone().or(cfg.prune.checkpoint.take());
            cmd::nn::prune(cfg)?
        }
        Command::Fetch { manifest } => {
            cfg.fetch.manifest = manifest.clone().or(cfg.fetch.manifest.take());
            cmd::fetch::run(cfg)?
        }
        Command::Report { runs } => cmd::report::run(cfg, runs)?,
    };
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let mut cfg = None;
    let result = set_threads()
        .and_then(|()| ExperimentConfig::load(cli.config.as_deref(), &cli.overrides))
        .and_then(|c| execute(cfg.insert(c), &cli.command));
    let Err(e) = result else {
        return ExitCode::SUCCESS;
    };
    let record = ErrorRecord::new(name, &e, cfg.as_ref());
    let json = serde_json::to_string_pretty(&record).expect("error record serializes");
    eprintln!("error: {e:#}");
    eprintln!("{json}");
    if let Some(c) = &cfg {
        let dir = RunDir::dir_for(c, name);
        if std::fs::create_dir_all(&dir).is_ok() {
            let _ = std::fs::write(dir.join(cim_cli::run::ERROR_RECORD), format!("{json}\n"));
            let _ = std::fs::remove_file(dir.join(cim_cli::run::MANIFEST));
        }
    }
    ExitCode::FAILURE
}
