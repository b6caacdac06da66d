use std::process::ExitCode;

use clap::Parser;
use loopdet_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loopdet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
