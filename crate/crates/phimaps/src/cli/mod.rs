//! Command-line runs: configuration in, `summary.json`, `series.csv` and
//! `artifact.map` out.
//!
//! Exit status is 0 when every check passes, 2 when a check fails and 1 on
//! any error.

pub mod artifact;
mod commands;
pub mod config;
pub mod output;
pub mod suite;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

pub use artifact::RunArtifact;
pub use config::RunConfig;
pub use output::Series;
pub use suite::{verify_suite, SuiteCheck, SuiteLevel, SuiteReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Numeric(#[from] crate::Error),
}

#[derive(Debug, Parser)]
#[command(name = "phimaps", version, about = "Energy, variation and stability checks for maps between discretized manifolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; overrides `run.workers`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Φ-energies of the configured map.
    Energy,
    /// Cross-check the first and second variation formulas on the configured map.
    Variation {
        #[command(subcommand)]
        action: VariationAction,
    },
    /// Evaluate an SSU criterion.
    Ssu {
        #[command(subcommand)]
        action: SsuAction,
    },
    /// Hessian-comparison constants and the monotonicity check.
    Liouville,
    /// Gradient flow or homotopy energy shrinking.
    Flow,
    /// Run the full batch of oracle checks.
    VerifySuite {
        /// quick or full.
        #[arg(long)]
        level: Option<String>,
        /// Fault to inject: none, flip_stress_coupling, flip_tension or drop_term_1..5.
        #[arg(long)]
        mutation: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum VariationAction {
    Verify,
}

#[derive(Debug, Subcommand)]
pub enum SsuAction {
    Check,
}

/// What an operation produced.
pub struct Outcome {
    pub summary: Value,
    pub series: Option<Series>,
    pub artifact: Option<RunArtifact>,
    pub pass: bool,
    /// One line for the terminal.
    pub message: String,
}

/// Resolved run settings shared by every operation.
pub struct RunContext {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunContext {
    fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let (config, config_hash) = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None if matches!(cli.command, Command::VerifySuite { .. }) => {
                let mut c = RunConfig::default();
                c.run.name = "verify-suite".into();
                (c, config::hash_text(""))
            }
            None => return Err(CliError::Config("`--config <path>` is required for this command".into())),
        };
        let seed = cli.seed.unwrap_or(config.run.seed);
        let out = cli
            .out
            .clone()
            .or_else(|| config.run.out.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| Path::new("runs").join(&config.run.name));
        Ok(RunContext {
            config,
            config_hash,
            seed,
            out,
        })
    }
}

/// Runs one parsed invocation and writes its files.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let ctx = RunContext::resolve(cli)?;
    if let Some(w) = cli.workers.or(ctx.config.run.workers) {
        if w == 0 {
            return Err(CliError::Config("field `workers` must be at least 1".into()));
        }
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let (operation, mut outcome) = match &cli.command {
        Command::Energy => ("energy", commands::energy(&ctx)?),
        Command::Variation { .. } => ("variation verify", commands::variation_verify(&ctx)?),
        Command::Ssu { .. } => ("ssu check", commands::ssu_check(&ctx)?),
        Command::Liouville => ("liouville", commands::liouville(&ctx)?),
        Command::Flow => ("flow", commands::flow(&ctx)?),
        Command::VerifySuite { level, mutation } => (
            "verify-suite",
            commands::verify_suite(&ctx, level.as_deref(), mutation.as_deref())?,
        ),
    };
    if let Value::Object(map) = &mut outcome.summary {
        let mut head = serde_json::Map::new();
        head.insert("experiment".into(), json!(ctx.config.run.name));
        head.insert("operation".into(), json!(operation));
        head.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        head.insert("config_hash".into(), json!(ctx.config_hash));
        head.insert("seed".into(), json!(ctx.seed));
        head.insert("pass".into(), json!(outcome.pass));
        head.append(map);
        *map = head;
    }
    write_outputs(&ctx.out, &outcome)?;
    Ok(outcome)
}

fn write_outputs(dir: &Path, outcome: &Outcome) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, output::to_json(&outcome.summary)?).map_err(|e| CliError::Io(format!("{}: {e}", summary.display())))?;
    if let Some(series) = &outcome.series {
        series.write(&dir.join("series.csv"))?;
    }
    if let Some(artifact) = &outcome.artifact {
        artifact.write(&dir.join("artifact.map"))?;
    }
    Ok(())
}

/// Parses `args`, runs, prints a one-line result and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            println!("{}", if outcome.pass { "PASS" } else { "FAIL" });
            if outcome.pass {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
