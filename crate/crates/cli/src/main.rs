mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wgopo_core::config::CONFIG_ENV;

#[derive(Parser, Debug)]
#[command(
    name = "wgopo",
    version,
    about = "Doubly-resonant waveguide OPO photon-pair source: spectra, lock, Monte-Carlo and analysis"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML configuration; falls back to $WGOPO_CONFIG, then built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override the RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a configuration entry, e.g. --set simulation.pair_rate_hz=1e7
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the simulated duration in seconds.
    #[arg(long, global = true)]
    pub duration: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cluster emission spectrum at one temperature.
    Spectrum {
        /// Signal band in nm.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        band: Option<Vec<f64>>,
        /// Crystal temperature in °C.
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Signal/idler mode pairing around degeneracy and the cluster list.
    Clusters {
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        band: Option<Vec<f64>>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Filtered emission against temperature and the double resonances.
    Tune,
    /// Side-of-fringe PID lock under heater drift.
    Lock,
    /// Event-level detection simulation; writes one time-tag file per channel.
    Simulate {
        #[arg(long, value_enum, default_value_t = Format::Bin)]
        format: Format,
        /// Run the folded-interferometer phase scan instead of a plain run.
        #[arg(long)]
        franson_scan: bool,
    },
    /// Analyse time-tag files.
    Analyze {
        #[arg(value_enum)]
        mode: Mode,
        /// g2: event files with channels 1 and 2. franson: the directory
        /// written by `simulate --franson-scan`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Loss, rate and accidental-coincidence budget.
    Budget {
        /// Measured detector-1 singles (/s) to infer the generation rate from.
        #[arg(long)]
        observed_singles: Option<f64>,
    },
    /// Recompute every reference number and figure; exit 0 only if all pass.
    ReproducePaper,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Bin,
    Csv,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    G2,
    Franson,
}

/// Exit codes: 0 success, 1 validation or parse error, 2 runtime or fit
/// failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use wgopo_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Domain { .. } | E::InvalidInput(_) | E::Config(_) | E::Parse(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<commands::Rejected>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
