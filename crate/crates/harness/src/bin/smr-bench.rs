use std::process::ExitCode;

use clap::Parser;
use crystalline_harness::bench_cli::BenchArgs;

fn main() -> ExitCode {
    match BenchArgs::parse().run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("smr-bench: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
