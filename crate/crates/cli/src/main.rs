//! Command-line front end: data generation, fitting, forecasting, spectra
//! and closed-loop control.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "koopman-em",
    version,
    about = "Bilinear Koopman surrogate models fitted by EM"
)]
struct Cli {
    /// Base random seed; a `seed` key in a config file takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Suppress progress and summary output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a benchmark system and write train/test datasets.
    Generate { config: PathBuf },
    /// Fit a model by EM; writes model.json, loglik.csv and runs.csv.
    Fit { dataset: PathBuf, config: PathBuf },
    /// Forecast each trajectory after estimating the state on a prefix.
    Predict {
        model: PathBuf,
        dataset: PathBuf,
        /// Observations used for state estimation.
        #[arg(long)]
        warmup: usize,
    },
    /// Eigenvalues of the generator at a constant input (drift by default).
    Spectrum {
        model: PathBuf,
        /// Comma-separated input values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        u: Option<Vec<f64>>,
    },
    /// Run the receding-horizon controller against a simulated plant.
    Mpc {
        model: PathBuf,
        /// One of slow_manifold, duffing, scalar_bilinear.
        plant: String,
        spec: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    let ctx = commands::Context {
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Generate { config } => commands::generate(&ctx, &config),
        Command::Fit { dataset, config } => commands::fit(&ctx, &dataset, &config),
        Command::Predict {
            model,
            dataset,
            warmup,
        } => commands::predict(&ctx, &model, &dataset, warmup),
        Command::Spectrum { model, u } => commands::spectrum(&ctx, &model, u),
        Command::Mpc { model, plant, spec } => commands::mpc(&ctx, &model, &plant, &spec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
