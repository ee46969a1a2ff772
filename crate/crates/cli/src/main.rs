//! `twostep`: simulate runs, check two-step behaviour and fast-path
//! recovery, fuzz schedules, and replay traces.
//!
//! Exit codes: 0 when every property holds, 1 on a violation (the witness
//! path is printed), 2 on usage or configuration errors.

mod commands;
mod opts;

use std::process::ExitCode;

use clap::Parser;

use opts::{Cli, Command, FileConfig};

fn dispatch(cli: Cli) -> commands::Outcome {
    let file = |path: &Option<std::path::PathBuf>| path.as_deref().map(FileConfig::load).transpose();
    match cli.command {
        Command::Run { common, run } => {
            let file = file(&common.config)?;
            commands::run_cmd(common.merged(file.as_ref())?, (*run).merged(file.as_ref())?)
        }
        Command::Check { common, check } => {
            let file = file(&common.config)?;
            commands::check_cmd(common.merged(file.as_ref())?, check.merged(file.as_ref())?)
        }
        Command::Fuzz { common, fuzz } => {
            let file = file(&common.config)?;
            commands::fuzz_cmd(common.merged(file.as_ref())?, fuzz.merged(file.as_ref())?)
        }
        Command::Oracle { common } => {
            let file = file(&common.config)?;
            commands::oracle_cmd(common.merged(file.as_ref())?)
        }
        Command::Replay { path } => commands::replay_cmd(&path),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
