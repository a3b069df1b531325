//! `kge`: prototype construction, head training, evaluation and error
//! analysis from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric
//! failure, 4 gradient check above tolerance. `KGE_THREADS` caps the
//! worker pool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Tolerance(String),
}

impl From<kge_core::Error> for CliError {
    fn from(e: kge_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Tolerance(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Tolerance(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "kge", version, about = "Knowledge-graph-embedded classification heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct ClassList {
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// File with one class name per line.
    #[arg(long)]
    pub classes_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build class prototypes from a graph, an embedding table or groundtruth co-occurrences.
    BuildPrototypes(commands::BuildArgs),
    /// Group classes into categories by WUP similarity in a taxonomy.
    Categorize(commands::CategorizeArgs),
    /// Train a projection head on a synthetic dataset.
    TrainHead(commands::TrainArgs),
    /// AP report and confusion matrix for a detection file.
    Evaluate(commands::EvaluateArgs),
    /// Row-wise JS distance between the errors of two confusion matrices.
    CompareErrors(commands::CompareArgs),
    /// Decode keypoint detections from an embedding map.
    DecodeHeatmap(commands::DecodeArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(commands::GradcheckArgs),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("KGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("KGE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::BuildPrototypes(a) => commands::build_prototypes(a),
        Command::Categorize(a) => commands::categorize(a),
        Command::TrainHead(a) => commands::train_head(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::CompareErrors(a) => commands::compare_errors(a),
        Command::DecodeHeatmap(a) => commands::decode_heatmap(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
