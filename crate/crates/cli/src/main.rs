//! `stratwave`: batch driver for the two-layer water-wave library.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use commands::RunError;
use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "stratwave", version, about = "Steady two-layer stratified water waves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel kernels.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the laminar two-point problem.
    Laminar(RunArgs),
    /// Audit criticality through the first variation.
    AuditGrad(RunArgs),
    /// Audit the second variation: symmetry and finite differences.
    AuditHess(RunArgs),
    /// Finite-basis linear stability verdict.
    Stability(RunArgs),
    /// Synthesize vorticity functions from a prescribed stream function.
    Manufacture(RunArgs),
    /// Residual of the governing system on a state.
    Residual(RunArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Laminar(a) => ("laminar", a),
            Command::AuditGrad(a) => ("audit-grad", a),
            Command::AuditHess(a) => ("audit-hess", a),
            Command::Stability(a) => ("stability", a),
            Command::Manufacture(a) => ("manufacture", a),
            Command::Residual(a) => ("residual", a),
        }
    }
}

/// Run details that vary between runs, kept apart from the primary outputs.
#[derive(Serialize)]
struct RunMeta {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    threads: usize,
    started_unix: f64,
    elapsed_seconds: f64,
    outputs: Vec<String>,
}

fn run(name: &'static str, args: &RunArgs) -> Result<(), RunError> {
    let cfg = RunConfig::load(&args.config)?;
    if cfg.name() != name {
        return Err(ConfigError::CommandMismatch {
            expected: name,
            found: cfg.name(),
        }
        .into());
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(ConfigError::Invalid("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", args.out.display()))?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let out = args.out.as_path();
    let (written, seed) = match &cfg {
        RunConfig::Laminar(c) => (commands::laminar(c, out)?, None),
        RunConfig::AuditGrad(c) => {
            let seed = args.seed.unwrap_or(c.seed);
            (commands::audit_grad(c, seed, out)?, Some(seed))
        }
        RunConfig::AuditHess(c) => {
            let seed = args.seed.unwrap_or(c.seed);
            (commands::audit_hess(c, seed, out)?, Some(seed))
        }
        RunConfig::Stability(c) => (commands::stability(c, out)?, None),
        RunConfig::Manufacture(c) => (commands::manufacture(c, out)?, None),
        RunConfig::Residual(c) => (commands::residual(c, out)?, None),
    };
    let meta = RunMeta {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        threads: rayon::current_num_threads(),
        started_unix: started,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        outputs: written
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
    };
    output::write_json(out, "run.meta.json", &meta)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.parts();
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stratwave {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
