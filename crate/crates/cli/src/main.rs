//! `disparity`: explain a model's cross-site performance gap by case-mix.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 attribution infeasible.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "disparity",
    version,
    about = "Shapley attribution of cross-site model performance gaps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the corresponding run-config fields.
#[derive(Args, Debug, Clone)]
struct EngineOverrides {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Standard-error tolerance that stops permutation sampling.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Cap on sampled permutations.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Minimum distinct rows a needed stratum must hold.
    #[arg(long)]
    min_stratum: Option<usize>,
    /// Which report files to write (the run log is always written).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FormatArg {
    Json,
    Csv,
    Svg,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Sampled Shapley attribution of the reference-vs-external gap.
    Attribute {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Attribute within this group factor, matching all others first.
        #[arg(long)]
        drill: Option<String>,
        #[command(flatten)]
        overrides: EngineOverrides,
    },
    /// Exact attribution by full permutation enumeration.
    Exact {
        /// Run configuration JSON.
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: EngineOverrides,
    },
    /// Bootstrap AUROC of one scored table.
    Auc {
        /// Scored table (CSV or JSONL) with score and label columns.
        data: PathBuf,
        #[arg(long, default_value = "score")]
        score_column: String,
        #[arg(long, default_value = "label")]
        label_column: String,
        /// Bootstrap replicates (at least 100).
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Master seed for the bootstrap draws.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic two-site benchmark with known ground truth.
    Synth {
        /// Scenario JSON path, or the name of a bundled scenario.
        scenario: String,
        /// Directory for the generated files.
        #[arg(long, default_value = "synth-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reference_n: Option<usize>,
        #[arg(long)]
        external_n: Option<usize>,
    },
    /// Summarize saved reports and render their stacked bars.
    Report {
        /// Report JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Directory for rendered outputs.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
