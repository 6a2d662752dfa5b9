use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use formflow::cli;

#[derive(Parser)]
#[command(name = "formflow", about = "Skew-symmetric-form analysis of differential equations")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analyses declared in a JSON problem spec
    Analyze { spec: PathBuf },
    /// Parse and validate a JSON problem spec without running it
    Validate { spec: PathBuf },
    /// Print the version
    Version,
}

fn main() -> ExitCode {
    match Args::parse().command {
        Command::Version => {
            println!("formflow {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        Command::Validate { spec } => match cli::load_spec(&spec) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Analyze { spec } => {
            let problem = match cli::load_spec(&spec) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let started = Instant::now();
            match cli::run(&problem) {
                Ok(report) => {
                    // timing goes to stderr so stdout stays byte-identical
                    // across repeated runs of the same spec
                    print!("{}", report.render());
                    eprintln!("elapsed: {:?}", started.elapsed());
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
