//! Command-line front end for the `randstop` library.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

/// Error caused by the user's input (exit code 2).
#[derive(Debug)]
pub struct BadInput(pub String);

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BadInput {}

#[derive(Parser)]
#[command(name = "randstop", version, about = "Optimal stopping of diffusions with randomized threshold rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config: a file path or an inline object.
    #[arg(long, global = true)]
    config: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Number of simulated paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Sample two-point exits directly instead of simulating paths.
    #[arg(long, global = true)]
    exact_sampling: bool,
    /// Threshold grid size, e.g. 200x200.
    #[arg(long, global = true, value_parser = config::parse_grid)]
    grid: Option<(usize, usize)>,
    /// Worker threads; 0 means one per core.
    #[arg(long, global = true, env = "RANDSTOP_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build a randomized threshold rule with a given exit law.
    Embed,
    /// Simulate a rule and compare the stopped law with its target.
    Simulate,
    /// Solve the rank-dependent utility problem in quantile form.
    OptimizeRdu,
    /// Optimize cautious stochastic choice over mixtures.
    OptimizeCsc,
    /// Compare the best pure and randomized threshold rules.
    Compare,
    /// Describe the natural scale of a diffusion.
    ScaleInfo,
}

#[derive(Serialize)]
struct ErrorReport {
    exit_code: u8,
    kind: String,
    reason: String,
}

fn classify(err: &anyhow::Error) -> (u8, String, String) {
    if let Some(e) = err.downcast_ref::<randstop::Error>() {
        let code = if e.is_input_error() { 2 } else { 1 };
        return (code, e.kind().into(), e.reason().into());
    }
    if let Some(e) = err.downcast_ref::<BadInput>() {
        return (2, "config".into(), e.0.clone());
    }
    (1, "internal".into(), format!("{err:#}"))
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(n) = cli.paths {
        cfg.simulation.paths = n;
    }
    if cli.exact_sampling {
        cfg.simulation.exact_sampling = true;
    }
    if let Some(g) = cli.grid {
        cfg.grid = g;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Embed => return commands::embed(&cfg, out),
        Command::Simulate => commands::simulate(&cfg, out)?,
        Command::OptimizeRdu => commands::optimize_rdu(&cfg, out)?,
        Command::OptimizeCsc => commands::optimize_csc(&cfg, out)?,
        Command::Compare => commands::compare(&cfg, out)?,
        Command::ScaleInfo => commands::scale_info(&cfg, out)?,
    }
    Ok(true)
}

fn write_error(out: &Path, report: &ErrorReport) {
    if let Ok(text) = randstop::io::to_json_string(report) {
        let _ = std::fs::write(out.join("error.json"), text);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(2);
    }
    let _ = std::fs::remove_file(cli.out.join("error.json"));
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: pushforward check failed, see check.json");
            ExitCode::from(1)
        }
        Err(e) => {
            let (code, kind, reason) = classify(&e);
            eprintln!("error: {reason}");
            write_error(&cli.out, &ErrorReport { exit_code: code, kind, reason });
            ExitCode::from(code)
        }
    }
}
