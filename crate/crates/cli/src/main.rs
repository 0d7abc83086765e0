//! `hom`: predict, simulate and analyse two-particle interference of twin
//! atoms.

mod commands;
mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ScenarioConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hom", version, about = "Twin-atom Hong-Ou-Mandel simulator")]
struct Cli {
    /// Scenario file (TOML). Defaults to the reference scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run_seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact and closed-form visibility predictions.
    Predict {
        /// Print the default configuration and exit.
        #[arg(long)]
        show_defaults: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Monte Carlo dip scan and write JSON-lines events.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Record the beams upstream of the mirror instead of a dip scan.
        #[arg(long)]
        source_only: bool,
    },
    /// Analyse an event file into CSV and JSON reports.
    Analyze {
        events: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also refit the dip for the configured volume sizes.
        #[arg(long)]
        volume_scan: bool,
        /// Treat the file as an upstream record and write calibration.json.
        #[arg(long)]
        calibration: bool,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config {
                origin: p.display().to_string(),
                line: None,
                message: e.to_string(),
            })?;
            ScenarioConfig::parse(&text, &p.display().to_string())?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.run_seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Predict { show_defaults: true, .. } = cli.command {
        print!("{}", ScenarioConfig::default().to_toml());
        return Ok(());
    }
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Predict { out, .. } => commands::predict(&cfg, out.as_deref()),
        Command::Simulate { out, source_only } => commands::simulate(&cfg, &out, source_only),
        Command::Analyze { events, out, volume_scan, calibration } => commands::analyze(
            &cfg,
            &commands::AnalyzeOptions { events: &events, out_dir: &out, volume_scan, calibration },
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hom: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
