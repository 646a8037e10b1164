//! The `probe-unbiasedness` subcommand: run the two-route adjoint check on
//! a scalar benchmark and report the gap in standard errors.

use std::path::Path;

use gpp_core::benchmarks;
use gpp_core::engine::{unbiasedness_probe, ProbeSettings};
use gpp_core::problem::ZeroPolicy;

use crate::experiment::ProbeFile;
use crate::report::fmt_float;
use crate::CliError;

pub fn run(config_path: &Path, seed_override: Option<u64>) -> Result<(), CliError> {
    let file = ProbeFile::load(config_path)?;
    let entry =
        benchmarks::build(&file.problem, file.case_id).map_err(CliError::from_core)?;

    let mut settings = ProbeSettings::default();
    if let Some(v) = file.n_outer {
        settings.n_outer = v;
    }
    if let Some(v) = file.n_inner {
        settings.n_inner = v;
    }
    if let Some(v) = file.replications {
        settings.replications = v;
    }
    if let Some(v) = file.reference_particles {
        settings.reference_particles = v;
    }
    if let Some(v) = file.negative_control {
        settings.negative_control = v;
    }

    let seed = seed_override.or(file.seed).unwrap_or(0);
    // The probe needs a measure-independent policy; the zero control is the
    // canonical one and exercises every term of the backward recursion.
    let policy = ZeroPolicy::new(entry.problem.dim_control());
    let report = unbiasedness_probe::<f64>(
        entry.problem.as_ref(),
        &policy,
        file.steps,
        settings,
        seed,
    )
    .map_err(CliError::from_core)?;

    println!("sample_mean={}", fmt_float(report.sample_mean));
    println!("sample_se={}", fmt_float(report.sample_se));
    println!("nested_mean={}", fmt_float(report.nested_mean));
    println!("nested_se={}", fmt_float(report.nested_se));
    println!("gap={}", fmt_float(report.gap()));
    println!("gap_sigmas={}", fmt_float(report.gap_sigmas()));

    if report.passes(3.0) {
        println!("verdict=PASS");
        Ok(())
    } else {
        println!("verdict=FAIL");
        Err(CliError::check_failed(format!(
            "adjoint gap is {:.2} standard errors (limit 3.0)",
            report.gap_sigmas()
        )))
    }
}
