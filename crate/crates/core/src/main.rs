use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = betakde::cli::Cli::parse();
    match betakde::cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
