//! `featflow`: video recognition on a budget, one key frame at a time.
//!
//! Exit codes: 0 success, 2 configuration/usage errors, 3 numeric
//! divergence, 1 everything else.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use featflow_core::Error;

#[derive(Parser)]
#[command(
    name = "featflow",
    version,
    about = "Sparse key-frame video recognition with flow-guided feature propagation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic moving-shapes dataset with exact flow fields.
    GenData(commands::GenDataArgs),
    /// Train feature, task, and flow networks on a dataset.
    Train(commands::TrainArgs),
    /// Scheduled inference over one snippet, writing a trace file.
    Infer(commands::InferArgs),
    /// FLOP reports for reference and built-in architectures.
    Flops(commands::FlopsArgs),
    /// Key-interval speedups implied by per-frame cost ratios.
    Speedup(commands::SpeedupArgs),
    /// Quality/cost grid over variants and key intervals.
    Sweep(commands::SweepArgs),
}

fn exit_code(err: &Error) -> i32 {
    if err.is_divergence() {
        return 3;
    }
    match err {
        Error::InvalidConfig(_)
        | Error::InvalidSpec(_)
        | Error::MissingCheckpoint(_)
        | Error::BadTensorFile { .. } => 2,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout and succeed; real parse
            // errors are configuration errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let started = std::time::Instant::now();
    let result = match &cli.cmd {
        Cmd::GenData(a) => commands::gen_data(a, started),
        Cmd::Train(a) => commands::train_cmd(a, started),
        Cmd::Infer(a) => commands::infer(a, started),
        Cmd::Flops(a) => commands::flops(a, started),
        Cmd::Speedup(a) => commands::speedup_cmd(a, started),
        Cmd::Sweep(a) => commands::sweep_cmd(a, started),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(exit_code(&e));
    }
}
