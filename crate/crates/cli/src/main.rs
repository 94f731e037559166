//! `svgp`: detect spatially variable genes from the command line.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};
use svgp_core::{Error, ErrorCategory};

use settings::{command, Settings, DIAGNOSE_KEYS, RUN_KEYS, SIMULATE_KEYS};

fn cli() -> Command {
    Command::new("svgp")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Bayesian detection of spatially variable genes")
        .subcommand_required(true)
        .arg(
            Arg::new("verbose")
                .short('v')
                .long("verbose")
                .global(true)
                .action(ArgAction::Count)
                .help("More log output (-v info, -vv debug)"),
        )
        .subcommand(command("run", "Fit the model and rank genes", RUN_KEYS))
        .subcommand(command("simulate", "Write a synthetic lattice dataset with known SV genes", SIMULATE_KEYS))
        .subcommand(command("diagnose", "Moran's I and chain health for a finished run", DIAGNOSE_KEYS))
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Io => 2,
        ErrorCategory::Validation => 3,
        ErrorCategory::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = match name {
        "run" => Settings::resolve(RUN_KEYS, sub).and_then(commands::run),
        "simulate" => Settings::resolve(SIMULATE_KEYS, sub).and_then(commands::simulate),
        _ => Settings::resolve(DIAGNOSE_KEYS, sub).and_then(commands::diagnose),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.category() {
                ErrorCategory::Io => "io",
                ErrorCategory::Validation => "validation",
                ErrorCategory::Numerical => "numerical",
            };
            eprintln!("error ({kind}): {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
