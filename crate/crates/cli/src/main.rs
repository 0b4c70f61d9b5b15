//! `mrstct`: low-dose CT simulation, transform learning, and PWLS
//! reconstruction from the command line.
//!
//! Progress and the resolved-parameter run header go to standard error;
//! results go to files or standard output, so pipelines compose. Given the
//! same inputs, config, and seeds, every command writes bit-identical
//! artifacts. Exit codes: 0 success, 2 configuration/validation error,
//! 3 file error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use mrstct::error::Error;

#[derive(Parser)]
#[command(
    name = "mrstct",
    version,
    about = "Low-dose CT: simulation, transform learning, PWLS reconstruction"
)]
struct Cli {
    /// Cap the worker threads used by the projection operators (default:
    /// one per core). Results do not depend on the thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom image.
    Phantom {
        /// Phantom kind: uniform, disk, or shepp_logan.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 1.0)]
        pixel_size_mm: f64,
        /// Output image path (payload + .hdr sidecar).
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate low-dose measurements of an image.
    Simulate {
        /// Input image.
        #[arg(long)]
        image: PathBuf,
        /// Config file providing [geometry] and optionally [noise].
        #[arg(long)]
        config: PathBuf,
        /// Incident photon count; overrides the config file.
        #[arg(long)]
        i0: Option<f64>,
        /// RNG seed (required: runs must be reproducible).
        #[arg(long)]
        seed: u64,
        /// Output sinogram path (payload + .hdr sidecar).
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered back-projection baseline reconstruction.
    Fbp {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, default_value_t = 1.0)]
        pixel_size_mm: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a multi-layer sparsifying transform model from images.
    Learn {
        /// Training image; repeat the flag for more.
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// Config file providing [patch] and [learn].
        #[arg(long)]
        config: PathBuf,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Iterative PWLS reconstruction with a learned model.
    Reconstruct {
        #[arg(long)]
        sino: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Config file providing [patch] and [recon].
        #[arg(long)]
        config: PathBuf,
        /// Initial image (typically the FBP output).
        #[arg(long)]
        init: PathBuf,
        /// Solver path: auto picks single for one-layer models.
        #[arg(long, value_enum, default_value_t = Solver::Auto)]
        solver: Solver,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a reconstruction against a reference image.
    Evaluate {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Circular region-of-interest diameter as a fraction of the image.
        #[arg(long, default_value_t = 1.0)]
        roi_fraction: f64,
        /// Also write the metric rows to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Solver {
    Auto,
    Single,
    Multi,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Dimension(_) => 2,
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Numeric(_) => 4,
    }
}

fn run(command: Command) -> mrstct::error::Result<()> {
    match command {
        Command::Phantom {
            kind,
            width,
            height,
            pixel_size_mm,
            out,
        } => commands::cmd_phantom(&kind, width, height, pixel_size_mm, &out),
        Command::Simulate {
            image,
            config,
            i0,
            seed,
            out,
        } => commands::cmd_simulate(&image, &config, i0, seed, &out),
        Command::Fbp {
            sino,
            width,
            height,
            pixel_size_mm,
            out,
        } => commands::cmd_fbp(&sino, width, height, pixel_size_mm, &out),
        Command::Learn {
            images,
            config,
            out,
        } => commands::cmd_learn(&images, &config, &out),
        Command::Reconstruct {
            sino,
            model,
            config,
            init,
            solver,
            out,
        } => commands::cmd_reconstruct(&sino, &model, &config, &init, solver, &out),
        Command::Evaluate {
            recon,
            reference,
            roi_fraction,
            out,
        } => commands::cmd_evaluate(&recon, &reference, roi_fraction, out.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            std::process::exit(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} worker threads: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
