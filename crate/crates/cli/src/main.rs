mod args;
mod commands;
mod config;
mod error;
mod report;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::{ConfigFile, Resolver};
use crate::error::{CliError, Result};

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("EOPR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| CliError::Invalid(format!("EOPR_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Invalid(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let mut resolver = Resolver::new(file);
    let plan = commands::run(cli.command, &mut resolver)?;
    for path in report::write_all(&plan.out_dir, &plan.outputs)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
