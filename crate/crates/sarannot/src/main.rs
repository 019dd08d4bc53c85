//! `sarannot`: batch front end for the SAR building-annotation
//! pipeline. Every command is driven by one `section.key = value`
//! config file; `--seed`, `--out`, and `--threads` override it.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sarannot::commands::{
    cmd_coregister, cmd_crf_refine, cmd_evaluate, cmd_label, cmd_label_optical, cmd_patchify,
    cmd_simulate, parse_counts, resolve_out_dir,
};
use sarannot::config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sarannot", version, about = "Synthetic-aperture radar building annotation pipeline")]
struct Cli {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for stochastic steps; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `io.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene point cloud with ground-truth classes.
    Simulate,
    /// Label a cloud against footprints and rasterize the building mask.
    Label,
    /// Register cloud B onto cloud A (coarse alignment + robust ICP).
    Coregister,
    /// Transfer labels from a georeferenced raster through a transform.
    LabelOptical,
    /// Refine a unary field with dense-CRF mean-field inference.
    CrfRefine,
    /// Score a predicted mask against a reference, or raw counts.
    Evaluate {
        /// Counts-only mode: `tp,fp,fn,tn` instead of mask files.
        #[arg(long)]
        counts: Option<String>,
    },
    /// Cut an image/mask pair into augmented training patches.
    Patchify,
}

fn main() -> Result<()> {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("setting up the thread pool")?;
    }

    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set("run.seed", seed.to_string());
    }
    let out_dir = resolve_out_dir(&config, cli.out)?;

    match cli.command {
        Command::Simulate => cmd_simulate(&config, &out_dir)?,
        Command::Label => cmd_label(&config, &out_dir)?,
        Command::Coregister => cmd_coregister(&config, &out_dir)?,
        Command::LabelOptical => cmd_label_optical(&config, &out_dir)?,
        Command::CrfRefine => cmd_crf_refine(&config, &out_dir)?,
        Command::Evaluate { counts } => {
            let counts = counts.as_deref().map(parse_counts).transpose()?;
            cmd_evaluate(&config, &out_dir, counts)?;
        }
        Command::Patchify => cmd_patchify(&config, &out_dir)?,
    }
    Ok(())
}
