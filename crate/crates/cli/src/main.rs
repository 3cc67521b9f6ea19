//! `cyclesense` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on invalid input (usage, configuration or
//! arguments), 2 on runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clap::error::ErrorKind;
use cyclesense::ride_format::DatasetPartition;

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "cyclesense", version, about = "Near-miss incident detection for bicycle ride recordings")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for data preparation and inference.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Region directory filter.
    #[arg(long, global = true)]
    region: Option<String>,
    /// android-old, android-new or ios.
    #[arg(long, global = true, value_parser = parse_partition)]
    partition: Option<DatasetPartition>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count readable rides per dataset partition.
    Scan {
        /// Ride directory; defaults to `data_dir` of the configuration.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic ride dataset.
    Gensynth,
    /// Split, clean, normalize, bucketize and encode a ride directory.
    Preprocess {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train CycleSense and the FCN baseline on preprocessed buckets.
    Train {
        /// Output directory of `preprocess`.
        #[arg(long)]
        data: PathBuf,
        /// Train CycleSense only.
        #[arg(long)]
        skip_fcn: bool,
    },
    /// Compare all models on the preprocessed test split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `train`, or the checkpoint inside it.
        #[arg(long)]
        model: PathBuf,
    },
    /// Score every 10 s bucket of one ride file.
    Detect {
        #[arg(long)]
        ride: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Sweep window length, RNN width, cell type and learning rate.
    Gridsearch {
        /// Ride directory; defaults to `data_dir` of the configuration.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn parse_partition(s: &str) -> Result<DatasetPartition, String> {
    DatasetPartition::parse(s).ok_or_else(|| format!("unknown partition {s:?}; expected android-old, android-new or ios"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = commands::Context::new(&cli.global)?;
    match cli.command {
        Command::Scan { data } => commands::scan(&ctx, data),
        Command::Gensynth => commands::gensynth(&ctx),
        Command::Preprocess { data } => commands::preprocess(&ctx, data),
        Command::Train { data, skip_fcn } => commands::train(&ctx, &data, skip_fcn),
        Command::Evaluate { data, model } => commands::evaluate(&ctx, &data, &model),
        Command::Detect { ride, model } => commands::detect(&ride, &model),
        Command::Gridsearch { data } => commands::gridsearch(&ctx, data),
    }
}
