//! `koed`: MOCU estimation, dataset generation and experimental design for
//! uncertain Kuramoto models.
//!
//! Exit codes: 0 success, 1 usage, 2 numerical failure, 3 format error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use koed::oed::PolicyKind;

#[derive(Parser, Debug)]
#[command(name = "koed", version, about = "Objective-based UQ and experimental design for uncertain Kuramoto models")]
struct Cli {
    /// JSON file with configuration overrides (flags take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream of the command derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Manifest path for commands that would otherwise only print.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimal control strength of one model.
    Xi {
        /// Model JSON: {"n", "omegas", "couplings"}.
        model: PathBuf,
        /// Control frequency; defaults to the mean natural frequency.
        #[arg(long)]
        control_omega: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampling estimate of the MOCU of a class.
    Mocu {
        /// Class JSON, or `n5` / `n7` for the built-in classes.
        class: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        control_omega: Option<f64>,
        /// Include every sampled control cost in the output.
        #[arg(long)]
        keep_samples: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a labeled dataset (JSON lines).
    GenData {
        /// `n5`, `n7`, or `custom` (profile taken from the config file).
        #[arg(long, default_value = "n5")]
        profile: String,
        #[arg(long)]
        count: Option<usize>,
        /// Samples per MOCU label.
        #[arg(long)]
        k: Option<usize>,
        /// Also write `<stem>.train.jsonl` / `<stem>.val.jsonl` with this training share.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run sequential experimental design trials.
    Oed {
        /// Class JSON, or `n5` / `n7`.
        #[arg(long, default_value = "n5")]
        class: String,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "sampling,entropy,random", value_parser = parse_method)]
        method: Vec<PolicyKind>,
        /// Samples per estimate when ranking by sampling.
        #[arg(long)]
        k: Option<usize>,
        /// Weight bundle for the surrogate methods.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        eval_k: Option<usize>,
        #[arg(long)]
        eval_repeats: Option<usize>,
        /// Decide outcomes by simulating the isolated pair.
        #[arg(long)]
        simulate_outcomes: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fraction of single-bound tightenings that do not raise the predicted MOCU.
    RankCheck {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Lower)]
        mode: Mode,
        /// Count only strict decreases as successes.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Surrogate error and speed on a labeled dataset.
    EvalSurrogate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    /// Raise the lower bound to the interval midpoint.
    Lower,
    /// Drop the upper bound to the interval midpoint.
    Upper,
}

fn parse_method(s: &str) -> Result<PolicyKind, String> {
    s.parse().map_err(|e: koed::Error| e.to_string())
}

/// Failure of a command, with its exit code.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(koed::Error),
}

impl From<koed::Error> for CliError {
    fn from(e: koed::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(koed::Error::InvalidArgument(_) | koed::Error::InvalidConfig(_)) => 1,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("KOED_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("KOED_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match init_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("koed: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
