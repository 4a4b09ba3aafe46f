//! Command-line orchestration of the audit pipeline.
//!
//! Each subcommand is also callable as a library function taking a
//! [`LoadedConfig`], which is how the integration tests drive it.

pub mod config;
pub mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairaudit_core::metrics::RobustnessVariant;

pub use config::{Judge, LoadedConfig, Overrides, RunConfig, SCHEMA_VERSION};
pub use pipeline::{cmd_eval, cmd_gen, cmd_report, cmd_run, cmd_simulate, generate_queries, load_inputs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("partial data: {0}")]
    Partial(String),
    #[error("internal error: {0:#}")]
    Internal(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Partial(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fairaudit", version, about = "Counterfactual fairness audit of LLM sentencing judgements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Restrict to these model ids (repeatable).
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Query each model at these temperatures (repeatable).
    #[arg(long = "temperature")]
    pub temperatures: Vec<f64>,
    /// Estimation variants (repeatable).
    #[arg(long = "variant")]
    pub variants: Vec<RobustnessVariant>,
    /// Significance thresholds (repeatable).
    #[arg(long = "tau")]
    pub taus: Vec<f64>,
}

impl Common {
    fn load(&self) -> Result<LoadedConfig, CliError> {
        let o = Overrides {
            models: self.models.clone(),
            temperatures: self.temperatures.clone(),
            variants: self.variants.clone(),
            taus: self.taus.clone(),
        };
        LoadedConfig::load(&self.config, &o)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the counterfactual query set and print counts per label.
    Gen(Common),
    /// Query every configured model, filling the response cache.
    Run(Common),
    /// Parse cached responses and write the report directory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Evaluate whatever is cached instead of failing on gaps.
        #[arg(long)]
        allow_missing: bool,
    },
    /// Run the whole pipeline against synthetic judges.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Synthetic judge config; overrides `synth_config_path`.
        #[arg(long)]
        synth: Option<PathBuf>,
    },
    /// Re-render report tables from a previous evaluation dump.
    Report(Common),
}

fn print_eval(s: &pipeline::EvalSummary) {
    println!("{} judge(s) evaluated; reports in {}", s.judges, s.report_dir.display());
    if s.missing > 0 {
        eprintln!("warning: {} responses were missing and skipped", s.missing);
    }
}

/// Runs a parsed command, printing progress to stdout and problems to stderr.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(c) => {
            let s = cmd_gen(&c.load()?)?;
            println!("{:<36} {:>6} {:>8} {:>8} {:>7}", "label", "cases", "queries", "excluded", "skipped");
            for l in &s.labels {
                println!("{:<36} {:>6} {:>8} {:>8} {:>7}", l.label, l.cases, l.queries, l.excluded, l.skipped);
            }
            println!("{} queries written to {}", s.total, s.path.display());
        }
        Command::Run(c) => {
            let s = cmd_run(&c.load()?)?;
            for j in &s.judges {
                println!("{}: {} ok ({} cached), {} failed", j.judge, j.ok, j.from_cache, j.failures());
                for (status, n) in &j.failed {
                    eprintln!("  {status}: {n}");
                }
            }
            if s.failures() > 0 {
                eprintln!("{} queries failed; rerun to retry them, cached answers are kept", s.failures());
            }
        }
        Command::Eval { common, allow_missing } => print_eval(&cmd_eval(&common.load()?, allow_missing)?),
        Command::Simulate { common, synth } => print_eval(&cmd_simulate(&common.load()?, synth.as_deref())?),
        Command::Report(c) => print_eval(&cmd_report(&c.load()?)?),
    }
    Ok(())
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(3),
    }
}
