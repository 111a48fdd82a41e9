mod args;
mod commands;
mod manifest;
mod settings;
mod svg;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use settings::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::GenData(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Infer(a) => &a.common,
        Command::GradCheck(a) => &a.common,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads {n}: {e}")))?;
    }
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::GradCheck(a) => commands::grad_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
