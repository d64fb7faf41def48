//! `skillsmith` command-line entry point.
//!
//! Every subcommand prints one JSON document on stdout and diagnostics on
//! stderr. Exit codes: 0 success, 1 operational failure, 2 no candidates
//! above the relevance threshold, 3 failed verdict or validation errors.

mod args;
mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use commands::{Context, Failure};

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
}

fn emit(json: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, json);
    let _ = writeln!(out);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    let result = config::load(&cli.global)
        .map_err(Failure::from)
        .and_then(Context::new)
        .and_then(|ctx| commands::run(&ctx, cli.command));
    let code = match result {
        Ok(outcome) => {
            emit(&outcome.json);
            outcome.code
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            emit(&failure.to_json());
            failure.code
        }
    };
    ExitCode::from(code as u8)
}
