mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(a, cli.workers),
        Command::SynthFixtures(a) => commands::synth(a, cli.seed),
        Command::Pseudogloss(a) => commands::pseudogloss(a, cli.seed, cli.workers),
        Command::Idgloss(a) => commands::idgloss(a, cli.seed, cli.workers),
        Command::Eval(c) => commands::eval(c),
        Command::TrainRanker(a) => commands::train(a, cli.seed, cli.workers),
        Command::GraphQuery(a) => commands::graph_query(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("signagent: {e}");
            ExitCode::from(e.code())
        }
    }
}
