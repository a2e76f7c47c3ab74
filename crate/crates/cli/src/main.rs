//! `occpred` command-line tool.

mod commands;
mod config;
mod inspect;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

/// Error reported as one JSON object on stderr; `code` becomes the exit status.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            kind: "input",
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            kind: "runtime",
            message: message.into(),
        }
    }
}

impl From<occpred::Error> for CliError {
    fn from(e: occpred::Error) -> Self {
        use occpred::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => Self::config(msg),
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Self::input(msg),
            E::Format(_) | E::Json(_) | E::Csv(_) => Self::input(msg),
            _ => Self::runtime(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "occpred", version, about = "Occlusion-aware occupancy prediction pipeline and navigation benchmark")]
struct Cli {
    /// Log progress (repeat for more detail); RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration; defaults are used for everything it omits.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set bench.trials=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default `<output_dir>/<command>`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth scenes.
    SceneGen(Common),
    /// Generate occluded/complete training pairs.
    DatasetGen(Common),
    /// Train the occupancy network on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default `<output_dir>/dataset-gen`).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or a baseline on missing cells of a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Trained weights file.
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// ORACLE, ALL_FREE, ALL_OCCUPIED or PASSTHROUGH.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Run the navigation benchmark.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes, e.g. `AGGRESSIVE,PREDICTED(ORACLE)`; replaces `bench.schemes`.
        #[arg(long)]
        schemes: Option<String>,
        /// Trained weights used by PREDICTED(MODEL).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summarize a grid, weights, episodes or JSON file; optionally export slices or points.
    Inspect(inspect::InspectArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SceneGen(c) => commands::scene_gen(&c),
        Command::DatasetGen(c) => commands::dataset_gen(&c),
        Command::Train { common, dataset } => commands::train(&common, dataset.as_deref()),
        Command::Eval {
            common,
            dataset,
            checkpoint,
            baseline,
        } => commands::eval(&common, dataset.as_deref(), checkpoint.as_deref(), baseline.as_deref()),
        Command::Bench {
            common,
            schemes,
            checkpoint,
        } => commands::bench(&common, schemes.as_deref(), checkpoint.as_deref()),
        Command::Inspect(a) => inspect::inspect(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": &e });
            eprintln!("{body}");
            ExitCode::from(e.code)
        }
    }
}
