//! Rendering of training reports: the per-epoch CSV body plus a `#`-prefixed
//! key=value footer with the run configuration and final statistics.

use gpp_core::solver::{ControlError, RunConfig, RunReport};

use crate::experiment::{Mode, YIndexChoice};

/// Formats a float with 17 significant digits so the printed value parses
/// back to the exact same bits. NaN (used for "not available") is spelled
/// out so spreadsheet tools keep the column numeric-ish.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Round-trip formatting for configuration echoes: plain decimal where it
/// stays short, scientific otherwise (`0.4`, `1e-8`, `1e300`).
fn fmt_compact(v: f64) -> String {
    let mag = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&mag) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Everything the footer echoes besides the report itself.
pub struct ReportMeta<'a> {
    pub problem: &'a str,
    pub case: Option<u32>,
    pub mode: Mode,
    pub horizon: f64,
    pub config: &'a RunConfig,
    pub y_index: YIndexChoice,
    /// Analytic/ODE optimal cost, when the benchmark has one.
    pub oracle_value: Option<f64>,
    /// Relative control error of the final policy against the oracle
    /// feedback, measured on an independent evaluation ensemble.
    pub final_l2: Option<ControlError>,
    pub policy_path: &'a str,
}

/// Renders the full report file: header, one row per completed epoch, and
/// the footer. Row `k` describes the policy *entering* epoch `k`, so row 1
/// is always the zero policy.
pub fn render_csv(report: &RunReport<f64>, meta: &ReportMeta) -> String {
    let mut out = String::from("epoch,wall_seconds,cost,cost_se,l2_error\n");
    for rec in &report.records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.epoch,
            fmt_float(rec.wall_seconds),
            fmt_float(rec.cost),
            fmt_float(rec.cost_se),
            rec.l2_error.map_or_else(|| "NaN".to_string(), fmt_float),
        ));
    }
    for line in summary_lines(report, meta) {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// The key=value summary: configuration echo first, then computed results.
/// The same lines (minus the `#`) are printed to stdout after a solve.
pub fn summary_lines(report: &RunReport<f64>, meta: &ReportMeta) -> Vec<String> {
    let cfg = meta.config;
    let mut lines = vec![
        format!("problem={}", meta.problem),
    ];
    if let Some(case) = meta.case {
        lines.push(format!("case={case}"));
    }
    lines.push(format!("mode={}", meta.mode.as_str()));
    lines.push(format!("seed={}", cfg.master_seed));
    lines.push(format!("M={}", cfg.particles));
    lines.push(format!("N={}", cfg.steps));
    lines.push(format!("K={}", cfg.epochs));
    lines.push(format!("T={}", fmt_compact(meta.horizon)));
    lines.push(format!("hidden_size={}", cfg.hidden));
    lines.push(format!("ridge_lambda={}", fmt_compact(cfg.ridge_lambda)));
    lines.push(format!("rho0={}", fmt_compact(cfg.schedule.rho0)));
    lines.push(format!("decay_power={}", fmt_compact(cfg.schedule.decay_power)));
    lines.push(format!("clip_bound={}", fmt_compact(cfg.clip_bound)));
    lines.push(format!("y_index={}", meta.y_index.as_str()));
    lines.push(format!("eval_M={}", cfg.eval_particles));
    lines.push(format!("eval_substeps={}", cfg.eval_substeps));
    lines.push(format!("cost={}", fmt_float(report.final_cost)));
    lines.push(format!("cost_se={}", fmt_float(report.final_cost_se)));
    if let Some(oracle) = meta.oracle_value {
        lines.push(format!("oracle_value={}", fmt_float(oracle)));
        if oracle != 0.0 && report.final_cost.is_finite() {
            let rel = (report.final_cost - oracle).abs() / oracle.abs();
            lines.push(format!("rel_error_vs_oracle={}", fmt_float(rel)));
        }
    }
    if let Some(l2) = &meta.final_l2 {
        lines.push(format!("final_l2_error={}", fmt_float(l2.relative)));
    }
    lines.push(format!("policy_path={}", meta.policy_path));
    if let Some(abort) = &report.abort {
        lines.push(format!("abort_epoch={}", abort.epoch));
        lines.push(format!("abort_message={}", abort.message));
    }
    lines
}
