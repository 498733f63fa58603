//! `omnifield`: generate datasets, train, evaluate and run sweeps.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use omnifield::eval::Strategy;
use omnifield::training::Task;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "omnifield", version, about = "Conditioned multimodal neural fields")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true, env = "OMNIFIELD_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Configuration flags shared by every verb. Flags override the config
/// file, which overrides the preset.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Named preset: desk-synthetic, climsim-thw or epa-aqs.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training steps per run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    /// Dataset container; generated from the configuration when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated run seeds (default: the configured seed list).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Region {
    Grid,
    Union,
    Intersection,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset container.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Sensor layout preset: full, ~50, ~30, climsim-thw, climsim-1pct.
        #[arg(long)]
        sparsity: Option<String>,
        /// Kuramoto coupling strength.
        #[arg(long)]
        coupling: Option<f64>,
        #[arg(long)]
        timesteps: Option<usize>,
    },
    /// Train a model and write a checkpoint container with metrics.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint at --out.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write a report CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "forecasting")]
        task: Task,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long, value_enum)]
        region: Option<Region>,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        /// Forecast offset in frames (default: the prediction horizon).
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score the six ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Train with corrupted inputs and score on clean inputs.
    Noise {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Compare fusion strategies with unimodal and multimodal inputs.
    Fusion {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Forecast target modality, by name or index (default: the last one).
        #[arg(long)]
        target: Option<String>,
        /// Comma-separated subset of strategies.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<Strategy>>,
    },
    /// Centered 2-D magnitude spectra of a field and its prediction.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Compare against this checkpoint's forecasts.
        #[arg(long, conflicts_with = "against")]
        checkpoint: Option<PathBuf>,
        /// Compare against the same modality of another dataset.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set thread count: {e}")))?;
    }
    match cli.command {
        Command::GenData {
            common,
            out,
            sparsity,
            coupling,
            timesteps,
        } => commands::gen_data(&common, &out, sparsity.as_deref(), coupling, timesteps),
        Command::Train { common, data, out, resume } => commands::train(&common, &data, &out, resume),
        Command::Eval {
            common,
            checkpoint,
            data,
            task,
            strategy,
            region,
            split,
            delta,
            out,
        } => commands::eval(
            &common,
            commands::EvalArgs {
                checkpoint: &checkpoint,
                data: &data,
                task,
                strategy,
                region,
                split,
                delta,
                out: &out,
            },
        ),
        Command::Ablate { common, sweep } => commands::ablate(&common, &sweep),
        Command::Noise { common, sweep, sigmas } => commands::noise(&common, &sweep, sigmas),
        Command::Fusion {
            common,
            sweep,
            target,
            strategies,
        } => commands::fusion(&common, &sweep, target.as_deref(), strategies),
        Command::Spectrum {
            common,
            data,
            checkpoint,
            against,
            modality,
            out,
        } => commands::spectrum(&common, &data, checkpoint.as_deref(), against.as_deref(), modality.as_deref(), &out),
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), one_line(&e.to_string()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
