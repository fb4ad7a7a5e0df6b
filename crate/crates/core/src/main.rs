use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = crfn::cli::Cli::parse();
    match crfn::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
