//! Stub runner: answers from `<cwd>/.typeforge-stub.json` instead of
//! executing the test.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use typeforge::stub::{respond, StubRules};

#[derive(Parser)]
struct Args {
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    cwd: PathBuf,
    #[arg(long)]
    timeout: f64,
    #[arg(long, default_value = "auto")]
    framework: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let _ = (&args.framework, args.timeout);
    let source = match std::fs::read_to_string(&args.test) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("stub runner: cannot read {}: {e}", args.test.display());
            return ExitCode::from(2);
        }
    };
    let rules = match StubRules::load(&args.cwd) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("stub runner: bad rules file: {e:#}");
            return ExitCode::from(2);
        }
    };
    let (line, code) = respond(&rules, &source);
    println!("{line}");
    ExitCode::from(code.clamp(0, 255) as u8)
}
