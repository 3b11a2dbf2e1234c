use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ilnerf::cli::{cmd_bench, cmd_eval, cmd_simulate, cmd_train};
use ilnerf::config::RunConfig;
use ilnerf::train::Mode;
use ilnerf::Result;

/// Incremental radiance-field training over sequential image chunks.
#[derive(Parser)]
#[command(name = "ilnerf", version, about)]
struct Cli {
    /// Key-value configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the training seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic chunk stream (PPM images + ground-truth poses).
    Simulate {
        /// Output directory for the stream.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the incremental training loop on an exported stream.
    Train {
        /// Stream directory produced by `simulate`.
        stream_dir: PathBuf,
        /// Training variant.
        #[arg(long, default_value = "full")]
        mode: String,
        /// Output directory for checkpoints, poses, and metrics.
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark the reference-selection solvers.
    Bench {
        /// Output directory for the benchmark CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: render training views, report quality and
    /// gauge-aligned pose errors.
    Eval {
        /// Field checkpoint (.ilnf).
        checkpoint: PathBuf,
        /// Aligned-pose JSON written by `train` (or ground-truth poses).
        poses: PathBuf,
        /// Stream directory with images and hidden ground truth.
        stream_dir: PathBuf,
        /// Output directory for the report.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match &cli.command {
        Command::Simulate { out } => cmd_simulate(&cfg, out),
        Command::Train {
            stream_dir,
            mode,
            out,
        } => cmd_train(&cfg, stream_dir, Mode::parse(mode)?, out),
        Command::Bench { out } => cmd_bench(&cfg, out),
        Command::Eval {
            checkpoint,
            poses,
            stream_dir,
            out,
        } => cmd_eval(&cfg, checkpoint, poses, stream_dir, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
