use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "joint-ukf", version, about = "Joint state and sparse model-correction estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Experiment configuration (TOML with dotted section keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Observer name; `compare` accepts a comma-separated list.
    #[arg(long, global = true)]
    pub observer: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the true system and write states_true.csv.
    Simulate(Common),
    /// Run one observer on a fresh simulation.
    Estimate(Common),
    /// Run several observers on the same measurements.
    Compare(Common),
    /// Re-read written CSVs and extract dominant terms.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Directory holding the CSVs; defaults to the output directory.
        dir: Option<PathBuf>,
    },
    /// Rank test of the joint system at the configured probe point.
    Observability {
        #[command(flatten)]
        common: Common,
        /// Leave the pseudo-measurement out of the stacked outputs.
        #[arg(long)]
        no_pseudo: bool,
    },
    /// Print σ⋆² and write the Gaussian/Laplace density table.
    Prior {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo sample count; defaults to `horseshoe.n_samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Estimate(c) => commands::estimate(&c),
        Command::Compare(c) => commands::compare(&c),
        Command::Analyze { common, dir } => commands::analyze(&common, dir),
        Command::Observability { common, no_pseudo } => commands::observability(&common, no_pseudo),
        Command::Prior { common, samples } => commands::prior(&common, samples),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
