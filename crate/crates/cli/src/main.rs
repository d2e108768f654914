//! `hpq`: batch runs of the harmonic parity qubit model.
//!
//! Exit codes: 0 on success (warnings included), 1 when a computation
//! fails, 2 for unreadable or invalid configuration and input files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hpq",
    version,
    about = "Harmonic parity qubit model: harmonics, spectra, synthetic maps and fits"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, env = "HPQ_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for output files; created if missing.
    #[arg(long, global = true, env = "HPQ_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HPQ_THREADS")]
    threads: Option<usize>,
    /// Override harmonics.k_max everywhere.
    #[arg(long, global = true, env = "HPQ_KMAX")]
    kmax: Option<usize>,
    /// Override basis.n_cut everywhere.
    #[arg(long, global = true, env = "HPQ_NCUT")]
    ncut: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Harmonic decomposition at one flux, with parity sums and regime.
    Decompose,
    /// Transition frequencies against flux.
    Sweep,
    /// Seeded synthetic two-tone spectroscopy map.
    Synth(SynthArgs),
    /// Global fit of transition datasets, with optional channel-count selection.
    Fit(FitArgs),
    /// Parity sums, regimes, nanowire harmonics and parity tables over gates.
    Classify(ClassifyArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Noise seed; overrides synth.seed.
    #[arg(long, env = "HPQ_SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Transition datasets (CSV), in addition to fit.datasets.
    datasets: Vec<PathBuf>,
    /// Channel counts to compare, e.g. 2..5; overrides fit.counts.
    #[arg(long, env = "HPQ_CHANNELS", value_parser = config::parse_counts)]
    channels: Option<config::Counts>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    /// Fit result document; its globals and gates replace the config's.
    #[arg(long)]
    result: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}
