use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cptrack_cli::Cli::parse();
    match cptrack_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
