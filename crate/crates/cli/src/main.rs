mod args;
mod commands;
mod config;
mod manifest;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::Parser;

use mobility_audit::report::Analysis;
use mobility_audit::{Error, ErrorKind, Result};

use args::{AuditCommand, Cli, Command, PolicyCommand};
use manifest::{timestamp, Run};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn dispatch(command: &Command) -> Result<Run> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Link(a) => commands::link(a),
        Command::Impute(a) => commands::impute(a),
        Command::Audit(AuditCommand::Measurement(a)) => commands::audit(Analysis::Measurement, a),
        Command::Audit(AuditCommand::Disparate(a)) => commands::audit(Analysis::Disparate, a),
        Command::Audit(AuditCommand::Joint(a)) => commands::audit(Analysis::Joint, a),
        Command::Audit(AuditCommand::Interaction(a)) => commands::audit(Analysis::Interaction, a),
        Command::Policy(PolicyCommand::Rank(a)) => commands::rank(a),
        Command::Policy(PolicyCommand::Allocate(a)) => commands::allocate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Validation | ErrorKind::Io => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    if cli.workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
        {
            eprintln!("error: cannot start {} workers: {e}", cli.workers);
            return ExitCode::from(EXIT_VALIDATION);
        }
    }

    let started = timestamp();
    let result = dispatch(&cli.command)
        .and_then(|run| run.write_manifest(cli.command.name(), argv[1..].to_vec(), started));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
