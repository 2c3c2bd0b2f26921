// SPDX-License-Identifier: Apache-2.0

//! `patgen`: encode layouts, train and sample the diffusion model, legalize
//! sampled topologies, and check, augment, measure and render the results.
//!
//! Exit status: 0 on success, 1 on invalid input or DRC violations, 2 on
//! any other failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patgen_core::legalize::Strategy;

/// Input the user can fix: bad files, bad flags, rejected configs.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "patgen", version, about = "Layout pattern generation with discrete diffusion")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for batch commands (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; falls back to the config file, then PATGEN_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a layout JSON into a DSQT tensor and a deltas CSV.
    Encode {
        layout: PathBuf,
        /// Pad the topology to this square size (default: the larger side).
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, short, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Rebuild a layout JSON from a tensor and its deltas CSV.
    Decode {
        tensor: PathBuf,
        deltas: PathBuf,
        /// Output file (default: stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write the bundled toy library: layouts, tensors, deltas and rules.
    Toy {
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        #[arg(long, short)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the denoiser on a directory of DSQT tensors.
    Train {
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Rules for training-time augmentation.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Per-iteration loss as CSV.
        #[arg(long)]
        losses: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Sample topology tensors from a checkpoint or the exact Bayes denoiser.
    Sample {
        #[arg(long, conflicts_with = "bayes", required_unless_present = "bayes")]
        checkpoint: Option<PathBuf>,
        /// Directory of DSQT tensors defining the Bayes denoiser.
        #[arg(long)]
        bayes: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Steps per denoiser call.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, short)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Assign geometry to sampled topologies and write DRC-clean layouts.
    Legalize {
        tensors: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// R (random), E (existing vectors) or D (divide and conquer).
        #[arg(long, default_value = "R")]
        strategy: Strategy,
        /// Directory of deltas CSV files used by strategy E.
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, short)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Check layouts against design rules; violations go to stdout as JSON lines.
    Drc {
        #[arg(required = true)]
        layouts: Vec<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Grow a tensor library with flips, rotations, mirrors and crops.
    Augment {
        input: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, short)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Complexity histogram and diversity of a tensor directory.
    Stats {
        input: PathBuf,
        /// Write the histogram as CSV.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Render layouts to SVG, one file per layout.
    Render {
        #[arg(required = true)]
        layouts: Vec<PathBuf>,
        #[arg(long, short, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use patgen_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::Numeric(_) => 2,
                _ => 1,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
