use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hefl_cli::commands;

/// Privacy-preserving cross-hospital ensemble learning simulator.
#[derive(Parser)]
#[command(name = "hefl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write the run directory.
    Run {
        /// Scenario config (TOML, or JSON with a .json extension).
        #[arg(long)]
        config: PathBuf,
        /// Seed override; the HEFL_SEED environment variable overrides this.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default runs/<scenario_id>-s<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a chain dump: genesis, linkage and payload digests.
    VerifyChain {
        /// Path to a .chain dump.
        #[arg(long)]
        chain: PathBuf,
    },
    /// Grid-search ensemble weights over probability-matrix CSV files.
    TuneWeights {
        /// One probability CSV per model.
        #[arg(long, num_args = 1.., required = true)]
        probs: Vec<PathBuf>,
        /// True labels CSV.
        #[arg(long)]
        labels: PathBuf,
        /// Grid step in (0, 1].
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Optional JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the ledger and encrypted-inference timing sweeps.
    Bench {
        /// Config file; its [bench] table configures the sweeps.
        #[arg(long)]
        config: PathBuf,
        /// Optional CSV output path (sweeps always print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate tables and plot data from a run directory.
    Report {
        /// A directory produced by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Output directory (default <run>/tables).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, seed, out } => commands::run(&config, seed, out),
        Command::VerifyChain { chain } => commands::verify_chain(&chain),
        Command::TuneWeights {
            probs,
            labels,
            step,
            out,
        } => commands::tune_weights(&probs, &labels, step, out),
        Command::Bench { config, out } => commands::bench_cmd(&config, out),
        Command::Report { run, out } => commands::report_cmd(&run, out),
    };
    std::process::exit(code);
}
