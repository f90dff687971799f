use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commsim::estimate::{parse_request, run_estimate};
use commsim::exec::{cmd_run, cmd_sweep, Axis};
use commsim::load_config;
use commsim::verify::run_suite;

/// Simulator for distributed optimization with compressed communication.
#[derive(Parser)]
#[command(name = "commsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured algorithm for every repeat.
    Run {
        config: PathBuf,
        /// Override `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid over one or more axes (comma separated:
    /// n, gamma_multiplier, algorithm).
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        axis: Vec<Axis>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a self-check suite: compressors, permk, gd_equivalence,
    /// constants, chain, gradients, descent, or all.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate ω and θ of a compressor collection described in a JSON file.
    Estimate { request: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            let report = cmd_run(&cfg)?;
            for r in &report.point.runs {
                match r.target() {
                    Some(t) if t.reached() => eprintln!("seed {}: reached, s2w {:.6e}, w2s {:.6e}", r.seed, t.s2w(), t.w2s()),
                    Some(t) => eprintln!("seed {}: not reached, s2w spent {:.6e}", r.seed, t.s2w()),
                    None => eprintln!("seed {}: did not finish", r.seed),
                }
            }
            Ok(report.ok())
        }
        Command::Sweep { config, axis, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = out {
                cfg.output.dir = dir;
            }
            Ok(cmd_sweep(&cfg, &axis)?.ok())
        }
        Command::Verify { suite, seed } => {
            let checks = run_suite(&suite, seed)?;
            for c in &checks {
                println!("{c}");
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Estimate { request } => {
            let text = std::fs::read_to_string(&request).with_context(|| format!("reading {}", request.display()))?;
            let report = run_estimate(&parse_request(&text)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(true)
        }
    }
}
