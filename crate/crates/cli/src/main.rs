use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gll_cli::{commands, OutputDir, RunConfig};

#[derive(Parser)]
#[command(name = "gll", version, about = "Graph learning layer experiments")]
struct Cli {
    /// Run configuration (`key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Finite-difference check of the backward pass on random graphs
    Gradcheck,
    /// Train a model and record per-epoch metrics
    Train,
    /// Embedding snapshots for several tau values plus a softmax baseline
    TauAblation,
    /// Attack sweep against a trained or loaded model
    Attack,
    /// Write the configured dataset as CSV
    GenData,
}

fn set_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("GLL_THREADS") {
        let n: usize = raw.parse().with_context(|| format!("GLL_THREADS={raw:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    set_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let out = OutputDir::acquire(&cfg.out_dir)?;
    let q = cli.quiet;
    match cli.command {
        Command::Gradcheck => {
            let summary = commands::gradcheck(&cfg, &out, q)?;
            if !summary.failures.is_empty() {
                eprintln!("{} gradient checks failed:", summary.failures.len());
                for f in &summary.failures {
                    eprintln!("  {f}");
                }
                return Ok(false);
            }
        }
        Command::Train => {
            commands::train_cmd(&cfg, &out, q)?;
        }
        Command::TauAblation => {
            commands::tau_ablation(&cfg, &out, q)?;
        }
        Command::Attack => {
            commands::attack(&cfg, &out, q)?;
        }
        Command::GenData => commands::gen_data(&cfg, &out, q)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
