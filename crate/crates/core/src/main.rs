use std::process::ExitCode;

use clap::Parser;
use splatsr::cli::{run, Cli};

fn main() -> ExitCode {
    // clap prints usage and exits with status 2 on bad arguments.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
