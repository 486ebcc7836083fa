use std::process::ExitCode;

use clap::Parser;
use cml_cli::{init_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| run(&cli));
    match result {
        Ok(outcome) if outcome.agreement => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("verdicts disagree; see the report in {}", cli.common.out.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
