//! `odt`: simulate, solve, reconstruct and validate 2-D diffraction tomography problems.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use odt_core::OdtError;

#[derive(Parser, Debug)]
#[command(name = "odt", version, about = "2-D optical diffraction tomography toolkit")]
struct Cli {
    /// Run configuration (key=value lines); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output prefix for every file a command writes.
    #[arg(long, global = true, default_value = "odt")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides ODT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate measurements of the configured phantom on the fine grid.
    Simulate,
    /// Solve one forward problem for the configured phantom on the reconstruction grid.
    Forward {
        /// Incidence angle in degrees.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        angle_deg: f64,
    },
    /// Reconstruct a potential from a measurement file.
    Reconstruct {
        /// Measurement file written by `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare CG and NAGD against the analytic bead solution over a contrast sweep.
    ValidateMie,
    /// Time forward solves and one gradient evaluation on the reconstruction grid.
    Bench,
    /// Extra memory needed to keep every forward iterate: N · K · threads · 16 bytes.
    PredictMemory {
        /// Pixels N.
        #[arg(value_name = "N")]
        pixels: u64,
        /// Stored forward iterates K.
        #[arg(value_name = "K")]
        iterations: u64,
        /// Concurrent illuminations.
        #[arg(value_name = "THREADS")]
        workers: u64,
    },
}

/// A failed command together with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<OdtError> for Failure {
    fn from(e: OdtError) -> Self {
        let code = match &e {
            OdtError::Config { .. } | OdtError::InvalidInput(_) | OdtError::Io(_) => 2,
            OdtError::GridMismatch { .. } | OdtError::DimensionMismatch { .. } | OdtError::Format(_) => 3,
            OdtError::NonFinite(_) | OdtError::NotConverged { .. } => 5,
        };
        Self::new(code, e.to_string())
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("ODT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Failure::new(2, format!("ODT_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Failure::new(2, "--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(2, e.to_string()))?;
    }
    if let Command::PredictMemory {
        pixels,
        iterations,
        workers,
    } = cli.command
    {
        return commands::predict_memory(pixels, iterations, workers);
    }
    let config = commands::load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Simulate => commands::simulate(&config, &cli.out),
        Command::Forward { angle_deg } => commands::forward(&config, &cli.out, angle_deg),
        Command::Reconstruct { data } => commands::reconstruct(&config, &data, &cli.out),
        Command::ValidateMie => commands::validate_mie(&config, &cli.out),
        Command::Bench => commands::bench(&config),
        Command::PredictMemory { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
