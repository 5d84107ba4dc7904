mod commands;
mod config;
mod csv;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use crate::commands::Run;
use crate::config::{command_name, Command, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cli: schema check failed: {0}")]
    Schema(String),
    #[error("cli: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] radner_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_solver_failure() => 2,
            _ => 1,
        }
    }
}

/// Incomplete-market equilibrium solvers and validation harnesses.
#[derive(Debug, Parser)]
#[command(name = "radner-eq", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration (optional for `example` and `lemma-suite`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set market.maturity=0.25`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `solver.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("RADNER_EQ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("cli: RADNER_EQ_THREADS must be a positive integer (got '{raw}')")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cli: thread pool: {e}")))
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => config::load(p, &cli.overrides)?,
        None => {
            let mut root = json!({});
            for ov in &cli.overrides {
                let (k, v) = ov
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("cli: override '{ov}' is not key=value")))?;
                config::apply_override(&mut root, k.trim(), v)?;
            }
            serde_json::from_value(root).map_err(|e| CliError::Config(format!("cli: config schema: {e}")))?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.to_string_lossy().into_owned();
    }
    cfg.resolve(cli.command)?;
    cfg.versions = Some(json!({
        "radner-eq": env!("CARGO_PKG_VERSION"),
        "radner-core": env!("CARGO_PKG_VERSION"),
    }));
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = load(cli)?;
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    let manifest = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, manifest).map_err(|e| CliError::Io(format!("writing {}: {e}", manifest_path.display())))?;

    let mut run = Run {
        dir: dir.clone(),
        precision: cfg.output.precision,
        summary: vec![format!("command: {}", command_name(cli.command))],
    };
    if let Some(p) = &cfg.provenance {
        run.summary.push(format!("config_provenance: {p}"));
    }
    run.summary.push(format!("seed: {}", cfg.solver.seed));
    let result = commands::run(cli.command, &cfg, &mut run);
    match &result {
        Ok(()) => run.summary.push("status: ok".into()),
        Err(e) => run.summary.push(format!("status: failed ({e})")),
    }
    let text = run.summary.join("\n") + "\n";
    let summary_path = dir.join("summary.txt");
    std::fs::write(&summary_path, text).map_err(|e| CliError::Io(format!("writing {}: {e}", summary_path.display())))?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
