//! Batch experiment runner for PU learning under SAR label mechanisms.

mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sarpu",
    version,
    about = "PU learning experiments with SAR-EM and its SCAR special cases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cross-validation protocol described by a config file.
    Run {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides config and SARPU_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run one experiment per point of a mechanism-parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON grid over mechanism parameters.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Relabel a dataset's PU labels through a mechanism and write the result.
    Label {
        /// Input CSV with feature, label, and truth columns.
        #[arg(long)]
        data: PathBuf,
        /// JSON mechanism spec.
        #[arg(long)]
        mechanism: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, jobs } => experiment::run(&config, out, jobs),
        Command::Sweep {
            config,
            grid,
            out,
            jobs,
        } => experiment::sweep(&config, &grid, out, jobs),
        Command::Label {
            data,
            mechanism,
            seed,
            out,
        } => experiment::label(&data, &mechanism, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
