//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use typeforge_core::pipeline::MethodStatus;

use crate::commands::{self, exit_for, Exit, Services};
use crate::config::{FileConfig, RunConfig};
use crate::gateway::GatewayMode;

#[derive(Debug, Parser)]
#[command(name = "typeforge", version, about = "Finds type errors in Python projects by generating tests")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// TOML or JSON file with defaults for any of these flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of the Python project.
    #[arg(long, global = true)]
    pub project: Option<PathBuf>,
    /// live, record or replay.
    #[arg(long, global = true)]
    pub mode: Option<GatewayMode>,
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    /// Refinement rounds after a rejected test.
    #[arg(long, global = true)]
    pub refine_budget: Option<u32>,
    /// Per-test timeout in seconds.
    #[arg(long, global = true)]
    pub timeout: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Test runner executable.
    #[arg(long, global = true)]
    pub runner: Option<PathBuf>,
    /// Stop after constraint analysis.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Consult the arbiter even when both reviewers agree.
    #[arg(long, global = true)]
    pub always_arbitrate: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the detector over a project.
    Detect {
        /// Restrict to these functions (`path.py::Class.method`, `Class.method` or a unique name).
        #[arg(long = "focal")]
        focal: Vec<String>,
    },
    /// Constraint analysis for one function.
    Analyze { selector: String },
    /// Score the detector on a manifest of buggy/fixed pairs.
    Evaluate { manifest: PathBuf },
    /// Run `detect` twice from a cassette and compare the outputs.
    ReplayVerify {
        #[arg(long = "focal")]
        focal: Vec<String>,
    },
}

impl GlobalArgs {
    fn as_file_config(&self) -> FileConfig {
        FileConfig {
            project: self.project.clone(),
            mode: self.mode,
            cassette: self.cassette.clone(),
            max_depth: self.max_depth,
            refine_budget: self.refine_budget,
            timeout: self.timeout,
            workers: self.workers,
            out: self.out.clone(),
            runner: self.runner.clone(),
            dry_run: self.dry_run.then_some(true),
            always_arbitrate: self.always_arbitrate.then_some(true),
            ..Default::default()
        }
    }

    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        RunConfig::resolve(file.overlay(self.as_file_config()))
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Failure.code() } else { Exit::Ok.code() };
        }
    };
    match dispatch(&cli) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_for(&e).code()
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<Exit> {
    let cfg = cli.global.resolve().map_err(|e| anyhow::Error::new(commands::UserError(format!("{e:#}"))))?;
    match &cli.command {
        Command::Detect { focal } => {
            let services = Services::open(&cfg)?;
            let run = commands::detect(&cfg, &services, focal)?;
            for m in &run.methods {
                let r = &m.report;
                if let Some(err) = &r.error {
                    eprintln!("{}: {err}", r.focal);
                }
                if r.status == MethodStatus::Reported {
                    println!("type error: {}", r.focal);
                }
            }
            println!(
                "{} method(s), {} reported; wrote {}",
                run.methods.len(),
                run.report.detected.len(),
                cfg.out.join("detect.json").display()
            );
            Ok(run.exit)
        }
        Command::Analyze { selector } => {
            let services = Services::open(&cfg)?;
            let (exit, path) = commands::analyze(&cfg, &services, selector)?;
            println!("wrote {}", path.display());
            Ok(exit)
        }
        Command::Evaluate { manifest } => {
            let services = Services::open(&cfg)?;
            let run = commands::evaluate(&cfg, &services, manifest)?;
            print!("{}", run.report.to_markdown());
            Ok(run.exit)
        }
        Command::ReplayVerify { focal } => {
            let (exit, diffs) = commands::replay_verify(&cfg, focal)?;
            if exit == Exit::Ok {
                println!("replay outputs identical");
            }
            for d in diffs {
                println!("differs: {d}");
            }
            Ok(exit)
        }
    }
}
