mod commands;
mod config;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use widebnet::imaging::{FarFieldScaling, KrylovConfig};
use widebnet::io::Split;

use commands::{FrequencyChoice, GenDataArgs, ImageArgs, InferArgs, TrainArgs};
use selftest::Suite;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "widebnet",
    version,
    about = "Wide-band butterfly network for inverse wave scattering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScalingArg {
    Nominal,
    Asymptotic,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a scattering dataset with the Helmholtz solver.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 21000)]
        ntrain: usize,
        #[arg(long, default_value_t = 4000)]
        ntest: usize,
    },
    /// Train a network; flags override the config's `train` section.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to 150.
        #[arg(long)]
        epochs: Option<usize>,
        /// Defaults to 32.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from `<out>/checkpoint`.
        #[arg(long)]
        resume: bool,
    },
    /// Predict images for a dataset split.
    Infer {
        /// Checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        png: bool,
    },
    /// Tikhonov and imaging-condition baselines.
    #[command(group(ArgGroup::new("freqs").required(true).args(["freq", "all_freqs"])))]
    ImageLs {
        #[arg(long)]
        data: PathBuf,
        /// Single frequency in Hz.
        #[arg(long)]
        freq: Option<f64>,
        /// Imaging condition over every stored frequency.
        #[arg(long)]
        all_freqs: bool,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Image only the first samples of the split.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value = "nominal")]
        scaling: ScalingArg,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 2000)]
        max_iter: usize,
        #[arg(long)]
        png: bool,
    },
    /// Run the oracle suites.
    Selftest {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Print the trainable parameter count of the config's network.
    ParamCount {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData {
            config,
            out,
            seed,
            ntrain,
            ntest,
        } => commands::gen_data(&GenDataArgs {
            config,
            out,
            seed,
            ntrain,
            ntest,
        })?,
        Command::Train {
            data,
            config,
            out,
            epochs,
            batch,
            seed,
            resume,
        } => commands::train_model(&TrainArgs {
            data,
            config,
            out,
            epochs,
            batch,
            seed,
            resume,
        })?,
        Command::Infer {
            checkpoint,
            data,
            out,
            split,
            png,
        } => commands::infer(&InferArgs {
            checkpoint,
            data,
            out,
            split: split.into(),
            png,
        })?,
        Command::ImageLs {
            data,
            freq,
            all_freqs,
            epsilon,
            out,
            split,
            limit,
            scaling,
            tol,
            max_iter,
            png,
        } => commands::image_ls(&ImageArgs {
            data,
            frequencies: match freq {
                Some(f) if !all_freqs => FrequencyChoice::Single(f),
                _ => FrequencyChoice::All,
            },
            epsilon,
            out,
            split: split.into(),
            limit,
            scaling: match scaling {
                ScalingArg::Nominal => FarFieldScaling::Nominal,
                ScalingArg::Asymptotic => FarFieldScaling::Asymptotic,
            },
            krylov: KrylovConfig {
                tolerance: tol,
                max_iterations: max_iter,
            },
            png,
        })?,
        Command::Selftest { suite } => {
            let checks = selftest::run(suite)?;
            for c in &checks {
                println!(
                    "{:<7} {:<52} {:>10.3e} <= {:<8.1e} {}",
                    c.suite,
                    c.name,
                    c.value,
                    c.bound,
                    if c.passed() { "PASS" } else { "FAIL" }
                );
            }
            return Ok(checks.iter().all(|c| c.passed()));
        }
        Command::ParamCount { config } => commands::param_count_cmd(&config)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
