use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::Config;

/// Space-time count models: simulation, approximate posterior fitting,
/// residual checks and approximation bias studies.
#[derive(Parser)]
#[command(name = "secar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Output directory (same as `out = DIR`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate counts and latent field on a graph.
    Simulate,
    /// Fit the model to a count panel.
    Fit,
    /// Randomized PIT residuals for a previous fit.
    Residuals,
    /// Compare approximation bias across methods on simulated data.
    BiasStudy,
    /// Model-implied correlation between locations.
    Corr,
}

fn run(cli: &Cli) -> secar::Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for s in &cli.set {
        cfg.set(s)?;
    }
    if let Some(out) = &cli.out {
        cfg.set(&format!("out={}", out.display()))?;
    }
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&cfg),
        Command::Fit => commands::fit_cmd(&cfg),
        Command::Residuals => commands::residuals_cmd(&cfg),
        Command::BiasStudy => commands::bias_study_cmd(&cfg),
        Command::Corr => commands::corr_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
