use std::process::ExitCode;

use clap::Parser;
use finequeue::cli::{self, Cli};
use finequeue::Error;

fn main() -> ExitCode {
    let args = Cli::parse();
    match cli::run(&args) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
