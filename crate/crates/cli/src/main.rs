//! `cldssm`: train, evaluate and generate data for continual-learning deep
//! state-space models.
//!
//! Exit codes: 0 on success, 1 on a configuration, data or checkpoint error
//! (reported as one `error: <category>: <message>` line on stderr), 2 on an
//! internal failure.

mod artifacts;
mod config;
mod eval;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::parse_list;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] cldssm::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn category(&self) -> &'static str {
        use cldssm::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Internal(_) => "internal",
            CliError::Core(e) => match e {
                E::InvalidConfig(_) => "config",
                E::Io { .. } => "io",
                E::Parse { .. } | E::MissingColumn(_) => "parse",
                E::InsufficientData { .. } => "data",
                E::IncompatibleCheckpoint(_) => "checkpoint",
                E::NonFiniteLoss { .. } => "training",
                E::NotPositiveDefinite { .. } | E::DimensionMismatch { .. } | E::LengthMismatch { .. } => "internal",
            },
        }
    }

    fn exit_code(&self) -> u8 {
        if self.category() == "internal" {
            2
        } else {
            1
        }
    }
}

#[derive(Parser)]
#[command(name = "cldssm", version, about = "Continual-learning deep state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Lgssm,
    Regimes,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured (method, seed) pair and write reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Forecast the tail of a series from a trained checkpoint.
    Eval {
        /// Transition checkpoint (θ).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Importance-state file of the same run.
        #[arg(long)]
        state: PathBuf,
        /// Series in the standard layout `t, x1.., u1..`; its last `horizon`
        /// rows are forecast, the rows before them are filtered.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Recognition checkpoint (φ); without it the initial ensemble is
        /// drawn from N(0, I).
        #[arg(long)]
        phi: Option<PathBuf>,
        /// Forecast CSV path.
        #[arg(long, default_value = "forecast.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        particles: usize,
        #[arg(long, default_value_t = 0.01)]
        obs_noise: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write synthetic series and a JSON sidecar of their ground truth.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        lgssm: synth::LgssmArgs,
        #[command(flatten)]
        regimes: synth::RegimeArgs,
    },
}

/// Seeds from `CLDSSM_SEED` (comma-separated), if set.
fn env_seeds() -> Result<Option<Vec<u64>>, CliError> {
    match std::env::var("CLDSSM_SEED") {
        Ok(s) => {
            let seeds =
                parse_list::<u64>(&s).map_err(|bad| CliError::Config(format!("CLDSSM_SEED: cannot parse `{bad}`")))?;
            if seeds.is_empty() {
                return Err(CliError::Config("CLDSSM_SEED is empty".into()));
            }
            Ok(Some(seeds))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("CLDSSM_SEED: {e}"))),
    }
}

fn default_seed(explicit: Option<u64>) -> Result<u64, CliError> {
    match explicit {
        Some(s) => Ok(s),
        None => Ok(env_seeds()?.map_or(0, |s| s[0])),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, jobs } => train::run(&config, jobs, env_seeds()?),
        Command::Eval {
            checkpoint,
            state,
            data,
            horizon,
            phi,
            out,
            particles,
            obs_noise,
            seed,
        } => eval::run(&eval::EvalArgs {
            checkpoint,
            state,
            data,
            horizon,
            phi,
            out,
            particles,
            obs_noise,
            seed: default_seed(seed)?,
        }),
        Command::Synth {
            kind,
            out,
            seed,
            lgssm,
            regimes,
        } => {
            let seed = default_seed(seed)?;
            match kind {
                SynthKind::Lgssm => synth::lgssm(&out, seed, &lgssm, &regimes),
                SynthKind::Regimes => synth::regimes(&out, seed, &regimes, &lgssm),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("error: usage: missing subcommand (train, eval or synth); see --help");
            return ExitCode::from(1);
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::from(e.exit_code())
        }
        Err(_) => {
            eprintln!("error: internal: panic");
            ExitCode::from(2)
        }
    }
}
