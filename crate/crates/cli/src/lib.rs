//! Command-line runner for mbrkit: decode, eval, significance, analyze and
//! bench over JSONL segment files.

pub mod args;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use mbrkit_core::analysis::AnalysisError;
use mbrkit_core::bench::BenchError;
use mbrkit_core::decision::DecisionError;
use mbrkit_core::provider::ProviderError;
use mbrkit_core::utility::ScoreError;

use args::{Cli, CommandArgs};
use config::{Command, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_SCORER: u8 = 2;

/// True when anything in the chain is a scorer or transport failure.
pub fn is_scorer_failure(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<ScoreError>().is_some_and(ScoreError::is_scorer_failure)
            || e.downcast_ref::<DecisionError>().is_some_and(DecisionError::is_scorer_failure)
            || e.downcast_ref::<ProviderError>().is_some_and(ProviderError::is_scorer_failure)
            || e.downcast_ref::<AnalysisError>().is_some_and(AnalysisError::is_scorer_failure)
            || e.downcast_ref::<BenchError>().is_some_and(BenchError::is_scorer_failure)
    })
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if is_scorer_failure(err) {
        EXIT_SCORER
    } else {
        EXIT_INPUT
    }
}

/// One line: the error chain joined by ": ", skipping causes already
/// spelled out by their parent.
pub fn render_error(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for e in err.chain() {
        let s = e.to_string();
        if parts.last().is_some_and(|p| p.contains(&s)) {
            continue;
        }
        parts.push(s);
    }
    parts.join(": ")
}

pub fn run_config(cfg: &RunConfig) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    pool.install(|| commands::run(cfg))
}

pub fn run_cli(cli: &Cli) -> Result<()> {
    let (command, flags) = match &cli.command {
        CommandArgs::Decode(f) => (Command::Decode, f),
        CommandArgs::Eval(f) => (Command::Eval, f),
        CommandArgs::Significance(f) => (Command::Significance, f),
        CommandArgs::Analyze(f) => (Command::Analyze, f),
        CommandArgs::Bench(f) => (Command::Bench, f),
    };
    run_config(&RunConfig::resolve(command, flags)?)
}

/// Parses `args` (program name first), runs, and maps the outcome to an
/// exit code. Usage errors exit 1; `--help` and `--version` exit 0.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run_cli(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("mbrkit: error: {}", render_error(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
