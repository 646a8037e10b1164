//! `gpp` — experiment runner for the particle gradient projection solver.
//!
//! Subcommands:
//! * `solve <file.json>` — train a policy on a registered benchmark and
//!   write a per-epoch CSV report plus a reloadable policy file.
//! * `oracle <problem> <query> ...` — print reference values (closed-form,
//!   ODE, or Monte-Carlo) without training anything.
//! * `probe-unbiasedness <file.json>` — statistical check that the
//!   sample-wise adjoint matches a nested conditional-expectation route.
//! * `list-problems` — registry contents.
//!
//! Exit codes: 0 success, 1 failed statistical check, 2 configuration
//! error, 3 numerical abort during training.

mod experiment;
mod oracle;
mod probe;
mod report;
mod solve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Error carrying the process exit code: 2 for configuration problems,
/// 3 for numerical aborts, 1 for a failed statistical check.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }

    pub fn check_failed(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    /// Maps solver-library errors onto exit codes: non-finite numerics are
    /// aborts (3), everything else is a configuration problem (2).
    pub fn from_core(err: gpp_core::Error) -> Self {
        let code = match &err {
            gpp_core::Error::NonFinite { .. } => 3,
            _ => 2,
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "gpp",
    version,
    about = "Train and evaluate stochastic-control policies by particle gradient projection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment from a JSON file and write a CSV report.
    Solve {
        /// Experiment file (JSON); see the configs/ directory for examples.
        config: PathBuf,
        /// Master seed; overrides the `seed` key in the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; overrides the `output_path` key. The policy file is
        /// written next to it with extension `.policy.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores). Unset falls back to the
        /// PGP_THREADS environment variable, then to all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Record wall-clock seconds per epoch. Off by default so report
        /// files are byte-reproducible.
        #[arg(long)]
        timing: bool,
    },
    /// Print a benchmark's reference values without training.
    Oracle {
        /// Problem id: lq, lq100, hjb, interbank, meanvar, priceimpact.
        problem: String,
        /// Query: `value` (optimal cost), `p_t` (lq Riccati solution at t),
        /// or `v` (hjb value at t with state a*ones).
        query: String,
        /// Positional query arguments, e.g. `case1`, or `0.5 1.0` for hjb.
        args: Vec<String>,
        /// Nonlinearity strength for hjb queries (default 1).
        #[arg(long)]
        lambda: Option<f64>,
        /// Monte-Carlo sample count for stochastic oracles.
        #[arg(long)]
        nmc: Option<usize>,
        /// Seed for stochastic oracles (default 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Case id for multi-case benchmarks; `caseN` as a positional
        /// argument means the same thing.
        #[arg(long)]
        case: Option<u32>,
        /// Terminal cost for hjb queries: g1 (smooth, default) or g2
        /// (oscillatory).
        #[arg(long)]
        terminal: Option<String>,
    },
    /// Compare the sample-wise adjoint against a nested Monte-Carlo route.
    ProbeUnbiasedness {
        /// Probe file (JSON) naming a scalar problem and step count.
        config: PathBuf,
        /// Master seed; overrides the `seed` key in the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores); PGP_THREADS is the fallback.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the registered benchmark problems.
    ListProblems,
}

/// Builds the global rayon pool. `--threads` wins, then `PGP_THREADS`;
/// 0 or absent means "all cores" (rayon's default).
fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let requested = match flag {
        Some(n) => Some(n),
        None => match std::env::var("PGP_THREADS") {
            Ok(raw) => Some(raw.trim().parse::<usize>().map_err(|_| {
                CliError::config(format!(
                    "PGP_THREADS must be a non-negative integer, got `{raw}`"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = requested {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::config(format!("cannot build thread pool: {e}")))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve {
            config,
            seed,
            out,
            threads,
            timing,
        } => {
            configure_threads(threads)?;
            solve::run(&config, seed, out, timing)
        }
        Command::Oracle {
            problem,
            query,
            args,
            lambda,
            nmc,
            seed,
            case,
            terminal,
        } => oracle::run(&oracle::OracleQuery {
            problem,
            query,
            args,
            lambda,
            nmc,
            seed,
            case,
            terminal,
        }),
        Command::ProbeUnbiasedness {
            config,
            seed,
            threads,
        } => {
            configure_threads(threads)?;
            probe::run(&config, seed)
        }
        Command::ListProblems => {
            for (id, blurb) in describe_problems() {
                println!("{id:<12} {blurb}");
            }
            Ok(())
        }
    }
}

/// One-line descriptions for `list-problems`, in registry order.
fn describe_problems() -> Vec<(&'static str, &'static str)> {
    gpp_core::benchmarks::list()
        .into_iter()
        .map(|id| {
            let blurb = match id {
                "lq100" => "100-d linear-quadratic regulator; Riccati closed form",
                "hjb" => "100-d semilinear HJB; log-transform oracle (cases 1-5 sweep lambda)",
                "interbank" => "mean-field interbank lending; analytic value (cases 1-6 vary the initial law)",
                "meanvar" => "mean-variance portfolio selection; analytic value (cases 1-6)",
                "priceimpact" => "trading with price impact; ODE-system oracle",
                "sine" => "sine-drift mean-field test problem (no reference value)",
                _ => "registered benchmark",
            };
            (id, blurb)
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
