use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use extprof_cli::{main_with, Cli, RunConfig};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match RunConfig::from_cli(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let (stdout, result) = main_with(&cfg);
    let _ = std::io::stdout().write_all(stdout.as_bytes());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
