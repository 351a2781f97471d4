//! `sorsnn`: train runs, injure and repair trained pathways, inspect report
//! archives and sweep loss coefficients.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Failure;

#[derive(Parser, Debug)]
#[command(name = "sorsnn", version, about = "Continual learning with regulated sparse spiking pathways")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a task sequence and write a report archive.
    Train {
        /// JSON run config; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted-path override such as `loss.alpha=0.5`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Injure one task's private synapses in a trained archive and retrain it.
    Injure {
        archive: PathBuf,
        /// Share of the target's unique synapses to remove, in [0, 1].
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        repair_epochs: Option<usize>,
        /// Output directory; defaults to `<archive>.injury`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize an archive as CSV on stdout.
    Inspect {
        archive: PathBuf,
        #[arg(value_enum)]
        what: Inspect,
    },
    /// Run one training per (value, seed) and tabulate mean and std.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        param: String,
        /// Comma-separated coefficient values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Directory receiving `sweep_<param>.csv`.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Inspect {
    /// Per-synapse count of tasks whose pathway uses it.
    Masks,
    /// Histogram of each task's active weights.
    Weights,
    /// Jaccard overlap between task masks.
    Overlap,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, overrides } => commands::train(config.as_deref(), &overrides),
        Command::Injure {
            archive,
            fraction,
            repair_epochs,
            out,
        } => commands::injure(&archive, fraction, repair_epochs, out),
        Command::Inspect { archive, what } => commands::inspect(&archive, what),
        Command::Sweep {
            config,
            overrides,
            param,
            values,
            seeds,
            out,
        } => commands::sweep(config.as_deref(), &overrides, &param, &values, &seeds, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
