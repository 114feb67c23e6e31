use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpsnet::data::{generate_dataset, load_dataset, write_dataset};
use dpsnet::gradcheck::suite;
use dpsnet::metrics::MetricsReport;
use dpsnet::train::{self, parse_size, Checkpoint, TrainConfig};
use dpsnet::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_GRADCHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "dpsnet", version, about = "Train and evaluate DPS-Net on camouflage scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file on a dataset directory or generated scenes.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Generate N scenes using the config's difficulty and data_seed.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image and mean metrics as CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Finite-difference checks of every op and block (seeds 0-4 by default).
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a generated dataset to disk.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// HxW, multiples of 32.
        #[arg(long)]
        size: String,
        #[arg(long)]
        difficulty: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Lib(Error),
    Gradcheck(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Checkpoint { .. } => EXIT_IO,
        Error::Config(_) | Error::InvalidArgument { .. } | Error::ShapeMismatch { .. } => EXIT_CONFIG,
        Error::NonScalarLoss(_) => 1,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("DPSNET_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("DPSNET_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train {
            config,
            data,
            synthetic,
            out,
        } => {
            let config = TrainConfig::load(&config)?;
            let samples = match (data, synthetic) {
                (Some(dir), None) => load_dataset(dir)?,
                (None, Some(n)) => generate_dataset(config.data_seed, n, config.net.input_size, config.difficulty)?,
                _ => return Err(Error::Config("pass exactly one of --data or --synthetic".into()).into()),
            };
            let outcome = train::train(&config, &samples, Some(&out))?;
            if let Some(last) = outcome.epochs.last() {
                println!("trained {} steps, final epoch loss {:.5}", outcome.trainer.adam.step, last.mean.total);
            }
            println!("checkpoint: {}", out.join(train::CHECKPOINT_FILE).display());
        }
        Command::Evaluate { checkpoint, data, csv } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (net, params) = ck.network()?;
            let samples = load_dataset(&data)?;
            let names = train::dataset_names(&data)?;
            let reports = train::evaluate(&net, &params, &samples)?;
            train::write_metrics_csv(&csv, &names, &reports)?;
            if let Some(mean) = MetricsReport::mean(&reports) {
                println!("{mean}");
            }
        }
        Command::Gradcheck { seed } => {
            let seeds: Vec<u64> = match seed {
                Some(s) => vec![s],
                None => (0..5).collect(),
            };
            let mut failed = 0;
            for seed in seeds {
                for report in suite::run(seed)? {
                    if !report.passed() {
                        failed += 1;
                        println!("FAIL seed {seed}: {report}");
                    } else {
                        log::info!("seed {seed}: {report}");
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::Gradcheck(failed));
            }
            println!("all gradient checks passed");
        }
        Command::Synth {
            seed,
            count,
            size,
            difficulty,
            out,
        } => {
            let samples = generate_dataset(seed, count, parse_size(&size)?, difficulty)?;
            write_dataset(&out, &samples)?;
            println!("wrote {count} scenes to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure_threads().map_err(Failure::from).and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Gradcheck(n)) => {
            eprintln!("error: {n} gradient checks failed");
            ExitCode::from(EXIT_GRADCHECK)
        }
    }
}
