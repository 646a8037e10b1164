//! The `oracle` subcommand: print reference values straight from the
//! benchmark oracles, with standard errors where the oracle itself is
//! Monte Carlo. Nothing here touches the solver.

use gpp_core::benchmarks::hjb::{cole_hopf_value, HjbTerminal};
use gpp_core::benchmarks::lq::{riccati_p, LqParams};
use gpp_core::benchmarks::meanvar::{optimal_value_mc, MeanVarProblem};
use gpp_core::benchmarks::{self};
use gpp_core::stochastics::{purpose, SeedSpec};

use crate::report::fmt_float;
use crate::CliError;

/// Everything parsed from `gpp oracle <problem> <query> [args...] [flags]`.
pub struct OracleQuery {
    pub problem: String,
    pub query: String,
    pub args: Vec<String>,
    pub lambda: Option<f64>,
    pub nmc: Option<usize>,
    pub seed: Option<u64>,
    pub case: Option<u32>,
    pub terminal: Option<String>,
}

pub fn run(q: &OracleQuery) -> Result<(), CliError> {
    match (q.problem.as_str(), q.query.as_str()) {
        ("lq" | "lq100" | "lq1d", "p_t") => riccati_query(q),
        ("hjb", "v") => hjb_point_query(q),
        (_, "value") => value_query(q),
        (problem, query) => Err(CliError::config(format!(
            "unknown oracle query `{query}` for `{problem}`; \
             try `value`, `p_t` (lq) or `v` (hjb)"
        ))),
    }
}

/// `oracle lq p_t <t>` — the scalar Riccati solution behind the LQ
/// benchmarks, same coefficients at every dimension.
fn riccati_query(q: &OracleQuery) -> Result<(), CliError> {
    let t = parse_f64(q.args.first(), "t (time in [0, T])")?;
    let params = LqParams::standard();
    if !(0.0..=params.horizon).contains(&t) {
        return Err(CliError::config(format!(
            "t must lie in [0, {}], got {t}",
            params.horizon
        )));
    }
    println!("p={}", fmt_float(riccati_p(&params, t)));
    Ok(())
}

/// `oracle hjb v <t> <a> [--lambda L] [--terminal g1|g2] [--nmc n] [--seed s]`
/// — the exact value function at state `a * ones(100)` via the
/// log-transform representation, printed with its Monte-Carlo standard
/// error.
fn hjb_point_query(q: &OracleQuery) -> Result<(), CliError> {
    let t = parse_f64(q.args.first(), "t (time in [0, T])")?;
    let a = parse_f64(q.args.get(1), "a (state is a * ones)")?;
    let lambda = q.lambda.unwrap_or(1.0);
    if lambda <= 0.0 {
        return Err(CliError::config(format!(
            "--lambda must be positive, got {lambda}"
        )));
    }
    let (terminal, horizon) = match q.terminal.as_deref() {
        None | Some("g1") => (HjbTerminal::LogQuadratic, 1.0),
        Some("g2") => (HjbTerminal::Oscillatory, 1.0),
        Some(other) => {
            return Err(CliError::config(format!(
                "--terminal must be g1 or g2, got `{other}`"
            )))
        }
    };
    if !(0.0..=horizon).contains(&t) {
        return Err(CliError::config(format!(
            "t must lie in [0, {horizon}], got {t}"
        )));
    }
    let dim = 100;
    let x = vec![a; dim];
    let n_mc = q.nmc.unwrap_or(100_000);
    let seed = SeedSpec::new(q.seed.unwrap_or(0), purpose::ORACLE, 0);
    let (value, se) = cole_hopf_value(terminal, &x, lambda, horizon - t, n_mc, seed);
    println!("value={}", fmt_float(value));
    println!("se={}", fmt_float(se));
    Ok(())
}

/// `oracle <problem> value [caseN | --case N]` — the optimal cost of a
/// registered benchmark. Closed-form where available; `meanvar` also
/// prints an independent Monte-Carlo cross-check.
fn value_query(q: &OracleQuery) -> Result<(), CliError> {
    // `lq` is accepted as shorthand for the registered 100-d problem.
    let id = if q.problem == "lq" { "lq100" } else { &q.problem };
    let case = parse_case(q)?;
    let entry = benchmarks::build(id, case).map_err(CliError::from_core)?;

    match entry.oracle_value {
        Some(value) => println!("value={}", fmt_float(value)),
        None => {
            return Err(CliError::config(format!(
                "problem `{id}` has no closed-form optimal cost{}",
                if id == "hjb" {
                    "; query a point value with `oracle hjb v <t> <a> --lambda <L>`"
                } else {
                    ""
                }
            )))
        }
    }

    // The mean-variance value has an independent sampling route; print it
    // alongside the analytic number so the two can be compared at sight.
    if id == "meanvar" {
        let problem = MeanVarProblem::case(case.unwrap_or(1));
        let n_mc = q.nmc.unwrap_or(200_000);
        let batches = 100;
        if n_mc < 2 * batches {
            return Err(CliError::config(format!(
                "--nmc must be at least {}, got {n_mc}",
                2 * batches
            )));
        }
        let seed = SeedSpec::new(q.seed.unwrap_or(0), purpose::ORACLE, 0);
        let (mc, se) = optimal_value_mc(problem.params(), problem.law(), n_mc, batches, seed);
        println!("mc_value={}", fmt_float(mc));
        println!("mc_se={}", fmt_float(se));
    }
    Ok(())
}

/// Case id from `--case N` or a positional `caseN` / bare integer.
fn parse_case(q: &OracleQuery) -> Result<Option<u32>, CliError> {
    if let Some(case) = q.case {
        return Ok(Some(case));
    }
    let Some(raw) = q.args.first() else {
        return Ok(None);
    };
    let digits = raw.strip_prefix("case").unwrap_or(raw);
    digits.parse::<u32>().map(Some).map_err(|_| {
        CliError::config(format!(
            "expected a case id like `case2` (or `--case 2`), got `{raw}`"
        ))
    })
}

fn parse_f64(arg: Option<&String>, what: &str) -> Result<f64, CliError> {
    let raw = arg.ok_or_else(|| CliError::config(format!("missing argument: {what}")))?;
    raw.parse::<f64>()
        .map_err(|_| CliError::config(format!("cannot parse `{raw}` as {what}")))
}
