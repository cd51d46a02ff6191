//! `hat`: train, transfer and evaluate hierarchical attribute classifiers.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit codes: 0 success, 2 validation error, 3 runtime error.
fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::run_train(a),
        Command::Predict(a) => commands::run_predict(a),
        Command::Eval(a) => commands::run_eval(a),
        Command::Bench(a) => commands::run_bench(a),
        Command::Sweep(a) => commands::run_sweep(a),
        Command::Synth(a) => commands::run_synth(a),
        Command::Propagate(a) => commands::run_propagate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = if err.is_validation() {
                "validation"
            } else {
                "runtime"
            };
            let record = serde_json::json!({
                "error": {"kind": kind, "message": err.to_string()}
            });
            eprintln!("{record}");
            ExitCode::from(if err.is_validation() { 2 } else { 3 })
        }
    }
}
