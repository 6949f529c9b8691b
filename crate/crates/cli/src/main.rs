//! `optlayer`: solve and inspect problem files, run gradient checks and the
//! denoising and poisoning experiments.
//!
//! Exit codes: 0 success, 1 input or verification error, 2 solver failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use optlayer::experiments::{
    canon_file, run_denoise, run_gradcheck, run_poison, solve_file, DenoiseConfig, ExperimentError, PoisonConfig,
};
use optlayer::qp::SolveStatus;

#[derive(Parser)]
#[command(name = "optlayer", version, about = "Differentiable QP layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file whose parameters all have values.
    Solve {
        file: PathBuf,
        /// Pretty-print the JSON result.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Check the LP derivative instead of the QP one.
        #[arg(long)]
        cone: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn the TV regularization strength on synthetic signals.
    Denoise {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Poison a ridge-regression training set.
    Poison {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the canonical form of a problem file.
    Canon {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read(path)
        .map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display())))
        .and_then(|b| String::from_utf8(b).map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display()))))
}

fn config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, ExperimentError> {
    match path {
        None => Ok(T::default()),
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| ExperimentError::Input(format!("{}: {e}", p.display()))),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), ExperimentError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| ExperimentError::Input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T, pretty: bool) -> String {
    let mut s = if pretty { serde_json::to_string_pretty(v) } else { serde_json::to_string(v) }.expect("report serializes");
    s.push('\n');
    s
}

/// Runs a command; `Ok(false)` means it completed but did not pass.
fn run(cmd: Command) -> Result<bool, ExperimentError> {
    match cmd {
        Command::Solve { file, json, out } => {
            let report = solve_file(&read(&file)?)?;
            emit(&to_json(&report, json), out.as_deref())?;
            if report.status != SolveStatus::Optimal {
                return Err(ExperimentError::Solver(format!("solver status {:?}", report.status)));
            }
            Ok(true)
        }
        Command::Gradcheck { seed, trials, cone, out } => {
            let report = run_gradcheck(seed, trials, cone)?;
            emit(&to_json(&report, true), out.as_deref())?;
            Ok(report.passed)
        }
        Command::Denoise { config: path, out } => {
            let cfg: DenoiseConfig = config(path.as_deref())?;
            emit(&to_json(&run_denoise(&cfg)?, true), out.as_deref())?;
            Ok(true)
        }
        Command::Poison { config: path, out } => {
            let cfg: PoisonConfig = config(path.as_deref())?;
            emit(&to_json(&run_poison(&cfg)?, true), out.as_deref())?;
            Ok(true)
        }
        Command::Canon { file, out } => {
            emit(&canon_file(&read(&file)?)?, out.as_deref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
