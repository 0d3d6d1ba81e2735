//! `lmm` — command-line pipeline for latent matching models.
//!
//! Subcommands cover the full loop: build a corpus from a click log, mine
//! synonym and tag knowledge, train a model, rank a collection, and evaluate
//! rankings against judgments. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: failed to size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Maps failures onto the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<lmm::Error>() {
        Some(lmm::Error::InvalidArgument(_)) => 1,
        Some(lmm::Error::Numerical(_)) | Some(lmm::Error::Divergence { .. }) => 3,
        Some(_) => 2,
        None => 2,
    }
}
