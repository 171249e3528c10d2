mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;
use error::CliResult;

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common, synth } => {
            let mut cfg = RunConfig::from_common(&common)?;
            cfg.apply_synth(&synth);
            cfg.resolve()?;
            commands::synth(&cfg)
        }
        Command::Plan { common, tokens, window } => {
            let mut cfg = RunConfig::from_common(&common)?;
            if tokens.is_some() {
                cfg.tokens = tokens;
            }
            cfg.apply_window(&window);
            cfg.resolve()?;
            commands::plan(&cfg)
        }
        Command::Train {
            common,
            data,
            train,
            folds,
        } => {
            let mut cfg = RunConfig::from_common(&common)?;
            cfg.apply_data(&data);
            cfg.apply_train(&train)?;
            cfg.apply_folds(&folds);
            cfg.resolve()?;
            commands::train(&cfg)
        }
        Command::Cv {
            common,
            data,
            train,
            folds,
        } => {
            let mut cfg = RunConfig::from_common(&common)?;
            cfg.apply_data(&data);
            cfg.apply_train(&train)?;
            cfg.apply_folds(&folds);
            cfg.resolve()?;
            commands::cv(&cfg)
        }
        Command::Explain {
            common,
            data,
            models,
            k,
        } => {
            let mut cfg = RunConfig::from_common(&common)?;
            cfg.apply_data(&data);
            if models.is_some() {
                cfg.models = models;
            }
            if let Some(k) = k {
                cfg.k = k;
            }
            cfg.resolve()?;
            commands::explain(&cfg)
        }
        Command::Validate { common, data, window } => {
            let mut cfg = RunConfig::from_common(&common)?;
            cfg.apply_data(&data);
            cfg.apply_window(&window);
            cfg.resolve()?;
            commands::validate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
