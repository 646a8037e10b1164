//! The `solve` subcommand: load an experiment file, train, write the CSV
//! report and the policy file, and echo the summary to stdout.

use std::path::{Path, PathBuf};

use gpp_core::problem::save_policy_file;
use gpp_core::solver;

use crate::experiment::{resolve, ExperimentFile};
use crate::report::{render_csv, summary_lines, ReportMeta};
use crate::CliError;

pub fn run(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    timing: bool,
) -> Result<(), CliError> {
    let file = ExperimentFile::load(config_path)?;
    let resolved = resolve(&file, seed, out, timing)?;
    let problem = resolved.entry.problem.as_ref();

    let report =
        solver::solve::<f64>(problem, &resolved.config).map_err(CliError::from_core)?;

    // Control accuracy of the final policy against the oracle feedback,
    // measured on its own evaluation substream. Skipped after an abort: the
    // rolled-back policy is already described by the last CSV row.
    let final_l2 = if problem.has_oracle_control() && report.abort.is_none() {
        solver::control_l2_error::<f64>(
            problem,
            &report.policy,
            resolved.config.eval_particles,
            resolved.config.steps,
            resolved.config.master_seed,
            1,
        )
        .ok()
    } else {
        None
    };

    let policy_json = save_policy_file(&report.policy).map_err(CliError::from_core)?;
    write_file(&resolved.policy_path, &policy_json)?;

    let policy_path_str = resolved.policy_path.display().to_string();
    let meta = ReportMeta {
        problem: resolved.entry.id,
        case: resolved.entry.case,
        mode: resolved.mode,
        horizon: problem.horizon(),
        config: &resolved.config,
        y_index: resolved.y_index_choice,
        oracle_value: resolved.entry.oracle_value,
        final_l2,
        policy_path: &policy_path_str,
    };
    write_file(&resolved.output_path, &render_csv(&report, &meta))?;

    for line in summary_lines(&report, &meta) {
        println!("{line}");
    }
    println!("report_path={}", resolved.output_path.display());

    if let Some(abort) = &report.abort {
        return Err(CliError::numerical(format!(
            "training aborted at epoch {}: {} (partial report written to {})",
            abort.epoch,
            abort.message,
            resolved.output_path.display()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::config(format!("cannot create `{}`: {e}", parent.display()))
            })?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::config(format!("cannot write `{}`: {e}", path.display())))
}
