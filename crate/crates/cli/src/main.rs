use std::process::ExitCode;

use clap::Parser;
use floc_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match floc_cli::execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("floc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
