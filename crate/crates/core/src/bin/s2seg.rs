use std::process::ExitCode;

use clap::Parser;
use s2seg::cli::{exit_code, run, Cli, Outcome};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(Outcome::Done(msg)) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Ok(Outcome::Failed(msg)) => {
            println!("{msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
