//! `cte`: encode datasets into spike tensors, train and evaluate the spiking
//! classifier, run ablations, render spike frames and report statistics.
//!
//! Exit codes: 0 success, 2 I/O or malformed input, 3 config, 4 numeric
//! divergence.

mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "cte",
    version,
    about = "Cluster-triggered spike encoding toolkit"
)]
struct Cli {
    /// Flat key = value config file; omitted keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for encoding and evaluation (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config `out` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a dataset split into a CTEA archive (or CTE1 files) and a report CSV.
    Encode,
    /// Train the spiking classifier; writes a checkpoint and per-epoch CSV.
    Train,
    /// Evaluate a checkpoint on a dataset split.
    Eval,
    /// Compare ablation variants on a shared sample set.
    Ablate {
        /// Comma-separated variants; overrides the config `variants` key.
        #[arg(long)]
        variants: Option<String>,
    },
    /// Write one P5 graymap per time bin of a spike file.
    Render {
        input: PathBuf,
        /// Sample index inside a CTEA archive.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Spike statistics of a CTE1 file or CTEA archive.
    Stats { input: PathBuf },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Encode => commands::encode(&cfg).map(drop),
        Command::Train => commands::train(&cfg).map(drop),
        Command::Eval => commands::eval(&cfg).map(drop),
        Command::Ablate { variants } => {
            let list = match variants {
                Some(s) => {
                    let mut c = cfg.clone();
                    c.set("variants", s)?;
                    c.variants
                }
                None => cfg.variants.clone(),
            };
            if list.is_empty() {
                return Err(CliError::Config("no ablation variants given".into()));
            }
            commands::ablate(&cfg, &list).map(drop)
        }
        Command::Render { input, index } => {
            let out = cli.out.clone().unwrap_or_else(|| cfg.out.join("render"));
            commands::render(input, *index, &out).map(drop)
        }
        Command::Stats { input } => commands::stats(input, cli.out.as_deref()).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cte: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
