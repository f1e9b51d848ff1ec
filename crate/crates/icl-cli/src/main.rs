use std::io;
use std::process::ExitCode;

use clap::Parser;
use icl_cli::{execute, Flags, Preset};

/// Runs in-context regression experiments and writes CSV tables.
#[derive(Parser)]
#[command(name = "icl-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Preset,
    #[command(flatten)]
    flags: Flags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("ICL_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                icl_core::par::set_workers(n);
            }
            _ => {
                eprintln!("usage error: ICL_WORKERS must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }
    let code = match execute(cli.command, &cli.flags, &mut io::stdout().lock(), &mut io::stderr().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
