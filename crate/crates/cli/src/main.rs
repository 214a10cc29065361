//! `dirsep`: mixing, direction finding, separation and scoring from the
//! command line.
//!
//! Exit status is 0 on success, 1 when the work itself fails and 2 for usage
//! errors, including ones only detectable after parsing.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dirsep", version, about = "Directional NTF source separation")]
pub struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the three-microphone delay scene from two mono clips.
    Mix {
        first: PathBuf,
        second: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Estimate the quantized direction of every time-frequency bin.
    Doa {
        mixture: PathBuf,
        /// JSON array geometry; defaults to the one-sample triangle.
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Separate a mixture into sources.
    Separate {
        mixture: PathBuf,
        #[arg(long, value_parser = ["dntf", "dnmf", "supervised"])]
        algo: Option<String>,
        /// One clean clip per source (supervised only).
        #[arg(long, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long)]
        geometry: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score estimates against references with BSS_EVAL.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        refs: Vec<PathBuf>,
        #[arg(long = "est", num_args = 1.., required = true)]
        estimates: Vec<PathBuf>,
        #[arg(long)]
        filter_length: Option<usize>,
        /// Write the scores here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run the full experiment described by a JSON config.
    Experiment {
        #[arg(value_name = "CONFIG")]
        experiment: PathBuf,
        /// Comma-separated subset of dntf,dnmf,supervised,irm,ibm.
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<String>>,
        #[arg(long)]
        filter_length: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
        /// Directory for report.json and separated sources.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

/// Model and analysis flags; each overrides the config file, which
/// overrides the built-in default.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// JSON file with any of the flag values below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frame_size: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long = "S")]
    pub sources: Option<usize>,
    #[arg(long = "Z")]
    pub atoms: Option<usize>,
    #[arg(long = "D")]
    pub directions: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["conditioned", "marginal"])]
    pub mask_mode: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIRSEP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
