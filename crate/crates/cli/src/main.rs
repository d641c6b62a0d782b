mod ablate;
mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "arfa", version, about = "ARFA spatiotemporal prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate moving-shapes train/test datasets.
    GenData(commands::GenDataArgs),
    /// Train a model and write a checkpoint.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint (or the copy-last-frame baseline) on a dataset.
    Eval(commands::EvalArgs),
    /// Train and evaluate a grid of model variants into a results table.
    Ablate(ablate::AblateArgs),
    /// Finite-difference check of every backward rule.
    Gradcheck(commands::GradcheckArgs),
}

/// Flags shared by every command that reads a settings file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` settings file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => ablate::run(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg += &format!(": {s}");
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
