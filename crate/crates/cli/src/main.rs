use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splinefuse_cli::{plot, print_summary, run_to_dir, Mode, RunConfig, RunError};

#[derive(Parser)]
#[command(name = "splinefuse", version, about = "Extended object tracking with B-spline shapes and CI track fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario and run one tracking pipeline over it.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// single:<sensor id>, centralized or decentralized
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Processes at most this many frames.
        #[arg(long)]
        frames: Option<usize>,
        /// Also writes each frame's point cloud under `<out>/points`.
        #[arg(long)]
        points: bool,
    },
    /// Writes one SVG per metric from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints the default configuration as TOML.
    DefaultConfig,
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, mode, out, seed, frames, points } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.scenario.seed = seed;
            }
            let summary = run_to_dir(&cfg, mode, frames, &out, points)?;
            println!("mode {mode}, artifacts in {}", out.display());
            print_summary(&summary, std::io::stdout().lock()).map_err(|source| RunError::Io { path: "<stdout>".into(), source })
        }
        Command::Plot { metrics, out } => {
            for path in plot::export_plots(&metrics, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                RunError::Divergence { .. } => eprintln!("error: divergence: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
