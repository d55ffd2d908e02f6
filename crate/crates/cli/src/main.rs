mod args;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qpgp::QpgpError;

use crate::args::{BenchArgs, BootstrapArgs, FitArgs, GenerateArgs, PredictArgs, SelectArgs};

/// Quasi-periodic Gaussian process toolkit.
#[derive(Debug, Parser)]
#[command(name = "qpgp", version, about)]
struct Cli {
    /// Worker threads for bootstrap and selection (QPGP_THREADS when omitted).
    #[arg(long, global = true, env = "QPGP_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a Standard QPGP series.
    Generate(GenerateArgs),
    /// Fit a series with the two-stage estimator.
    Fit(FitArgs),
    /// One-step-ahead prediction trace from a fitted model.
    Predict(PredictArgs),
    /// Fit, then bootstrap standard errors and percentile intervals.
    Bootstrap(BootstrapArgs),
    /// Choose the period or the kernel family.
    Select(SelectArgs),
    /// Time the dense and structured implementations.
    Bench(BenchArgs),
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 2;
    pub const NOT_CONVERGED: u8 = 3;
    pub const BENCH_MISMATCH: u8 = 4;
}

/// What a successful command reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

fn error_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<QpgpError>() {
        Some(QpgpError::BenchMismatch(_)) => exit::BENCH_MISMATCH,
        _ => exit::INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(exit::INPUT);
        }
    }

    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Bootstrap(a) => commands::bootstrap(&a),
        Command::Select(a) => commands::select(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::from(exit::OK),
        Ok(Status::NotConverged) => {
            eprintln!("warning: Stage I did not converge; the result was still written");
            ExitCode::from(exit::NOT_CONVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let mismatch = anyhow::Error::from(QpgpError::BenchMismatch("n = 10".into())).context("bench");
        assert_eq!(error_code(&mismatch), exit::BENCH_MISMATCH);
        assert_eq!(error_code(&anyhow::Error::from(QpgpError::EmptySeries)), exit::INPUT);
        assert_eq!(error_code(&anyhow::anyhow!("io")), exit::INPUT);
    }
}
