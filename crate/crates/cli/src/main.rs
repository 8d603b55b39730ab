//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use molcnp::baselines::BaselineError;
use molcnp::chem::CacheError;
use molcnp::cnp::CnpError;
use molcnp::data::DataError;
use molcnp::experiments::ExperimentError;
use molcnp::nn::NnError;

use commands::Experiment;

#[derive(Parser)]
#[command(
    name = "molcnp",
    about = "Few-shot molecular score regression with conditional neural processes",
    version
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. --set training.epochs=100
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute or validate the fingerprint cache for the dataset.
    Fingerprint,
    /// Train the model on (ftrain, dtrain) and write checkpoints.
    Train,
    /// Track regression/calibration metrics across training epochs.
    Calibrate,
    /// Few-shot sweep of the trained model against the baselines.
    Fewshot,
    /// Train/evaluate across plain and drug-likeness-modified score classes.
    Generalize,
    /// Pool-based Bayesian optimization with the trained model.
    Bo,
    /// Emit a synthetic task family as TSV.
    Synth,
}

/// Process-level error with its exit-code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing configuration (exit 2).
    Config(String),
    /// Unreadable or malformed data files (exit 3).
    Data(String),
    /// Numeric failure during training or evaluation (exit 4).
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InsufficientPool { .. }
            | DataError::UnknownFunctionName { .. }
            | DataError::InvalidSplit { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFiniteLoss | NnError::NonPositiveVariance { .. } => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CnpError> for CliError {
    fn from(e: CnpError) -> Self {
        match e {
            CnpError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            CnpError::Nn(inner) => CliError::from(inner),
            CnpError::InsufficientObservations { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::NonFiniteLoss => CliError::Numeric(e.to_string()),
            BaselineError::KTooLarge { .. } => CliError::Config(e.to_string()),
            BaselineError::Nn(inner) => CliError::from(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidConfig { .. }
            | ExperimentError::PoolExhausted { .. }
            | ExperimentError::UnknownFunction { .. } => CliError::Config(e.to_string()),
            ExperimentError::Cnp(inner) => CliError::from(inner),
            ExperimentError::Baseline(inner) => CliError::from(inner),
            ExperimentError::Data(inner) => CliError::from(inner),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <FILE> is required".into()))?;
    let (config, hash) = config::load_config(config_path, &cli.set)?;
    let needs_dataset = !matches!(cli.command, Command::Synth);
    config.validate(needs_dataset)?;
    match cli.command {
        Command::Fingerprint => commands::cmd_fingerprint(&config, &hash),
        Command::Train => commands::cmd_train(&config, &hash),
        Command::Calibrate => commands::cmd_experiment(&config, &hash, Experiment::Calibrate),
        Command::Fewshot => commands::cmd_experiment(&config, &hash, Experiment::Fewshot),
        Command::Generalize => commands::cmd_experiment(&config, &hash, Experiment::Generalize),
        Command::Bo => commands::cmd_experiment(&config, &hash, Experiment::Bo),
        Command::Synth => commands::cmd_synth(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
