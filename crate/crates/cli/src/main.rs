//! `mdiqkd`: model, simulate, analyse and optimise four-intensity MDI-QKD
//! links from a TOML configuration.

mod commands;
mod config;
mod counts;
mod fail;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdiqkd::decoy::Mode;

use crate::config::{Overrides, RunConfig};
use crate::fail::CliResult;

#[derive(Parser)]
#[command(
    name = "mdiqkd",
    version,
    about = "Four-intensity decoy-state MDI-QKD toolkit"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, short, global = true, env = "MDIQKD_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed for sampling and optimization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pulse pairs sent, e.g. 1e9 or 4.5e10.
    #[arg(long, global = true)]
    pairs: Option<f64>,
    /// Alice to Bob fiber length in km.
    #[arg(long, global = true)]
    distance: Option<f64>,
    /// Output file, written atomically; standard output when absent.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Use expected counts from the model instead of sampling.
    #[arg(long, global = true)]
    expected_mode: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print expected gains and error rates of every source pair.
    Model {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Generate a counts file.
    Simulate,
    /// Run the decoy-state analysis on a counts file.
    Analyze {
        /// Counts file; with --expected-mode, model counts are used instead.
        counts: Option<PathBuf>,
        /// Analyse even if the counts file was made with other physics.
        #[arg(long)]
        override_provenance: bool,
        /// Skip finite-size corrections.
        #[arg(long)]
        asymptotic: bool,
    },
    /// Search for the protocol parameters that maximise the key rate.
    Optimize {
        /// Total objective evaluations.
        #[arg(long)]
        budget: Option<usize>,
        /// Independent starting points.
        #[arg(long)]
        starts: Option<usize>,
        /// Maximise the asymptotic rate instead of the finite-key rate.
        #[arg(long)]
        asymptotic: bool,
    },
    /// Tabulate MDI and BB84 key rates against distance as CSV.
    Sweep {
        /// Comma-separated fiber lengths in km.
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
    },
}

fn mode(asymptotic: bool) -> Mode {
    if asymptotic {
        Mode::Asymptotic
    } else {
        Mode::Finite
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    let ov = Overrides {
        seed: g.seed,
        pairs: g.pairs,
        distance: g.distance,
        out: g.out,
        expected_mode: g.expected_mode,
    };
    let mut cfg = RunConfig::load(g.config.as_deref(), &ov)?;
    match cli.command {
        Command::Model { json } => commands::model(&cfg, json),
        Command::Simulate => commands::simulate_cmd(&cfg),
        Command::Analyze {
            counts,
            override_provenance,
            asymptotic,
        } => commands::analyze(
            &cfg,
            counts.as_deref(),
            override_provenance,
            mode(asymptotic),
        ),
        Command::Optimize {
            budget,
            starts,
            asymptotic,
        } => {
            cfg.run.budget = budget.unwrap_or(cfg.run.budget);
            cfg.run.starts = starts.unwrap_or(cfg.run.starts);
            commands::optimize(&cfg, mode(asymptotic))
        }
        Command::Sweep { distances } => commands::sweep(&cfg, distances),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.kind.exit_code()
        }
    }
}
