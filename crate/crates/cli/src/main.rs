//! `tetrasplat`: one subcommand per pipeline stage.
//!
//! ```text
//! tetrasplat synth    -> sparse/, images/, ground_truth.ea3d
//! tetrasplat init     -> mesh.txt, init.ea3d
//! tetrasplat train    -> checkpoint.ea3d, checkpoint.state, train_log.jsonl, train_summary.json
//! tetrasplat prune    -> pruned.ea3d, prune_scores.csv
//! tetrasplat compress -> model.ea3d, compression.json
//! tetrasplat render   -> renders/*.png
//! tetrasplat eval     -> metrics.json (also printed)
//! ```

mod config;
mod stages;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Overrides, PipelineConfig};

/// Environment variable that caps the worker thread count.
const THREADS_ENV: &str = "TETRASPLAT_THREADS";

#[derive(Parser)]
#[command(name = "tetrasplat", version, about = "Mesh-anchored Gaussian splatting pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output (and default input) directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Gaussians per mesh face.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    prune_ratio: Option<f64>,
    /// Curvature threshold for protection and densification.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    codebook_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a textured primitive scene with renders and a COLMAP bundle.
    Synth,
    /// Tetrahedralize the sparse points and place k Gaussians per face.
    Init,
    /// Optimise the initial scene against the posed images.
    Train {
        /// Continue from checkpoint.ea3d and checkpoint.state.
        #[arg(long)]
        resume: bool,
        /// Write a checkpoint every N iterations (default: at the end only).
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Stop after this iteration, leaving a checkpoint to resume from.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Importance-prune the trained checkpoint.
    Prune,
    /// Vector-quantize a raw model into a compact codebook model.
    Compress {
        /// Raw model to compress (default: pruned.ea3d).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Render every bundle view of a model to PNG.
    Render {
        /// Model to render (default: model.ea3d).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// PSNR and SSIM on held-out views; writes and prints metrics.json.
    Eval {
        /// Model to evaluate (default: model.ea3d).
        #[arg(long, conflicts_with = "renders")]
        input: Option<PathBuf>,
        /// Compare a directory of PNG renders instead of rendering a model.
        #[arg(long)]
        renders: Option<PathBuf>,
        /// Use every view, not just the held-out ones.
        #[arg(long)]
        all_views: bool,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let c = cli.common;
    let overrides = Overrides {
        seed: c.seed,
        output: c.output,
        k: c.k,
        prune_ratio: c.prune_ratio,
        tau: c.tau,
        codebook_size: c.codebook_size,
    };
    let cfg = PipelineConfig::load(c.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth => stages::synth(&cfg).context("synth stage"),
        Command::Init => stages::init(&cfg).context("init stage"),
        Command::Train {
            resume,
            checkpoint_every,
            until,
        } => stages::train(&cfg, resume, checkpoint_every, until).context("train stage"),
        Command::Prune => stages::prune_stage(&cfg).context("prune stage"),
        Command::Compress { input } => stages::compress(&cfg, input).context("compress stage"),
        Command::Render { input } => stages::render(&cfg, input).context("render stage"),
        Command::Eval { input, renders, all_views } => {
            let doc = stages::eval(&cfg, input, renders, all_views).context("eval stage")?;
            let text = serde_json::to_string_pretty(&doc)?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
