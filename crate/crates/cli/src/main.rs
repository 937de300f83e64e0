//! `qflow`: fit, register, build atlases from and evaluate multi-shell
//! diffusion volumes.
//!
//! Exit codes: 0 on success, 2 for input errors (bad flags, unreadable or
//! malformed files, mismatched inputs), 3 for numerical failures.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "qflow", version, about = "Diffeomorphic registration and atlases for multi-shell diffusion MRI")]
struct Cli {
    /// Worker threads for the numerical kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File of `key=value` lines supplying any long flag; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit basis coefficients to diffusion-weighted samples.
    Fit(commands::FitArgs),
    /// Register an atlas volume onto a subject volume.
    Register(commands::RegisterArgs),
    /// Estimate a population atlas from subject volumes.
    Atlas(commands::AtlasArgs),
    /// Compare two coefficient volumes.
    Evaluate(commands::EvaluateArgs),
    /// Generate synthetic phantoms and warped ensembles.
    Phantom(commands::PhantomArgs),
}

/// Error classes that map onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<qflow::Error> for Failure {
    fn from(e: qflow::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Input(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Register(a) => commands::register(a),
        Command::Atlas(a) => commands::atlas(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Phantom(a) => commands::phantom(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
