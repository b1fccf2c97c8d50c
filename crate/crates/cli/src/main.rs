use std::process::ExitCode;

use clap::Parser;
use tlroa_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(m) => {
            for a in &m.artifacts {
                println!("wrote {}", a.path);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
