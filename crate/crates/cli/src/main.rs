//! `trainguard`: train, execute and evaluate shielded train-operation agents.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trainguard_core::Variant;

#[derive(Parser)]
#[command(name = "trainguard", version, about = "Safe train operation with a shield and a safe-action searching tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Scenario file; the bundled default section when absent.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds, overriding `run.seeds`.
    #[arg(long = "seed", value_name = "LIST", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Episodes per seed, overriding the scenario.
    #[arg(long, value_name = "N")]
    pub episodes: Option<usize>,
    /// Agent variant, overriding `run.agent`.
    #[arg(long, value_name = "AGENT")]
    pub agent: Option<Variant>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Seeds processed concurrently.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and report every violated invariant.
    Validate {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Print the effective scenario as TOML.
        #[arg(long)]
        print: bool,
    },
    /// Train an agent on every seed, then run greedy executions.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also train the shield-only counterpart and report the decline.
        #[arg(long)]
        compare: bool,
    },
    /// Run greedy executions of a checkpoint.
    Execute {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Use the main policy even when an additional actor is stored.
        #[arg(long)]
        main_policy: bool,
    },
    /// Feed a constant command through the shield and searching tree.
    NoiseTest {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CMD", default_value_t = 1.0, allow_hyphen_values = true)]
        command: f64,
    },
    /// Disturbed executions over a grid of probabilities and magnitudes.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Grid values shared by probability and magnitude.
        #[arg(long, value_name = "LIST", value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5])]
        grid: Vec<f64>,
        #[arg(long)]
        main_policy: bool,
    },
    /// Train SSA agents with differently sized additional actors.
    Ablation {
        #[command(flatten)]
        common: Common,
    },
    /// Execute a checkpoint on another scenario and compare with the noise test.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        main_policy: bool,
    },
    /// Summarise a metrics CSV written by this tool.
    Report {
        #[arg(long, value_name = "PATH")]
        metrics: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Validate { config, print } => commands::validate(config.as_deref(), print),
        Command::Train { common, compare } => commands::train(&common, compare),
        Command::Execute { common, checkpoint, main_policy } => commands::execute(&common, &checkpoint, !main_policy),
        Command::NoiseTest { common, command } => commands::noise_test(&common, command),
        Command::Robustness { common, checkpoint, grid, main_policy } => {
            commands::robustness(&common, &checkpoint, &grid, !main_policy)
        }
        Command::Ablation { common } => commands::ablation(&common),
        Command::Transfer { common, checkpoint, main_policy } => commands::transfer(&common, &checkpoint, !main_policy),
        Command::Report { metrics } => commands::report(&metrics),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
