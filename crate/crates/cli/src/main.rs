// SPDX-License-Identifier: MIT OR Apache-2.0

//! `graphbelief` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod parse;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parse::GraphArgs;

/// Failure of one invocation.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values.
    Usage(String),
    /// Bad or missing input.
    Data(String),
    /// Library failure.
    Core(graphbelief::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<graphbelief::Error> for CliError {
    fn from(e: graphbelief::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "graphbelief", version, about = "Graph-structure belief dynamics toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate mixture random walks over two hypotheses.
    GenWalks {
        #[command(flatten)]
        graphs: GraphArgs,
        /// Mixture ratios, comma-separated.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        rho: String,
        /// Walks per mixture ratio.
        #[arg(long, default_value_t = 8)]
        n_walks: usize,
        /// Tokens per walk.
        #[arg(long, default_value_t = 2000)]
        length: usize,
        /// Tokens per segment.
        #[arg(long, default_value_t = 100)]
        segment_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in agent and emit curves, logits or activations.
    Surrogate(commands::SurrogateArgs),
    /// Score external next-word predictions into accuracy curves.
    Score {
        #[command(flatten)]
        graphs: GraphArgs,
        /// Walk file the predictions refer to.
        #[arg(long)]
        walks: PathBuf,
        /// Prediction file: `{walk_id, position, word}` per line.
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        curve: commands::CurveArgs,
        /// Output curve file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the belief-dynamics model to accuracy curves.
    Fit(commands::FitArgs),
    /// Compare two fits by AIC and BIC.
    SelectModel {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dirichlet energies of class-mean activations against both hypotheses.
    Energy(commands::GeometryArgs),
    /// Two-dimensional PCA of class means, as SVG and CSV, plus principal angles.
    Pca(commands::GeometryArgs),
    /// Normalized effects of activation patching.
    PatchEffects(commands::EffectArgs),
    /// Normalized effects and contrasts of steering.
    SteerEffects(commands::EffectArgs),
    /// Drop repeated intervention records, keeping first occurrences.
    Dedup {
        /// Input files, read in order.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and SEM of a metric per group, as CSV.
    Aggregate {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated subset of layer, alpha, control, direction.
        #[arg(long, default_value = "layer")]
        group_by: String,
        /// normalized_effect, seen_contrast or heldout_contrast.
        #[arg(long, default_value = "normalized_effect")]
        metric: String,
        /// Aggregate repeated records as they are.
        #[arg(long)]
        keep_duplicates: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every line of a record file against a schema.
    Validate {
        file: PathBuf,
        /// walk, accuracy_curve, activation, logit or intervention.
        #[arg(long)]
        schema: String,
    },
    /// Run the whole pipeline from a config file.
    Run { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
