mod args;
mod commands;
mod config;
mod error;
mod manifest;
mod scene;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Ctx;
use config::FileConfig;
use error::{Failure, ResultExt};

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FUSSI_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::validation(anyhow::anyhow!("FUSSI_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().runtime("threads")
}

fn run(cli: Cli) -> Result<(), Failure> {
    threads()?;
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).invalid("config")?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        file,
        seed: cli.seed,
        out: cli.out,
        timings: cli.timings,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Track(a) => commands::track(&ctx, a),
        Command::Features(a) => commands::features(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
