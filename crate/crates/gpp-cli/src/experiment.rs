//! Experiment files: the JSON schema accepted by `gpp solve` and its
//! resolution against the benchmark registry defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use gpp_core::benchmarks::{self, BenchmarkEntry};
use gpp_core::engine::YIndex;
use gpp_core::solver::{LearningSchedule, RunConfig};

use crate::CliError;

/// Whether a problem optimizes a single controller against fixed dynamics
/// (`socp`) or against the empirical law of the whole ensemble (`mfc`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Socp,
    Mfc,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Socp => "socp",
            Mode::Mfc => "mfc",
        }
    }
}

/// Which adjoint sample enters the control gradient: the next-step value
/// (`n_plus_1`, the default) or the current-step solution of the implicit
/// recursion (`n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum YIndexChoice {
    #[serde(rename = "n")]
    Current,
    #[serde(rename = "n_plus_1")]
    Next,
}

impl YIndexChoice {
    pub fn to_engine(self) -> YIndex {
        match self {
            YIndexChoice::Current => YIndex::Current,
            YIndexChoice::Next => YIndex::Next,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            YIndexChoice::Current => "n",
            YIndexChoice::Next => "n_plus_1",
        }
    }
}

/// The experiment file as written on disk. Every field except `problem` is
/// optional; missing ones fall back to the registry defaults for the
/// problem. Unknown keys are rejected so typos fail loudly instead of
/// silently running with defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub problem: String,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, rename = "M")]
    pub particles: Option<usize>,
    #[serde(default, rename = "N")]
    pub steps: Option<usize>,
    #[serde(default, rename = "K")]
    pub epochs: Option<usize>,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub hidden_size: Option<usize>,
    #[serde(default)]
    pub ridge_lambda: Option<f64>,
    #[serde(default)]
    pub rho0: Option<f64>,
    #[serde(default)]
    pub decay_power: Option<f64>,
    #[serde(default)]
    pub clip_bound: Option<f64>,
    #[serde(default)]
    pub y_index: Option<YIndexChoice>,
    #[serde(default, rename = "eval_M")]
    pub eval_particles: Option<usize>,
    #[serde(default)]
    pub case_id: Option<u32>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

impl ExperimentFile {
    /// Reads and parses an experiment file. Parse errors (including unknown
    /// keys) are configuration errors.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read `{}`: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!("invalid experiment file `{}`: {e}", path.display()))
        })
    }
}

/// An experiment file resolved against the registry: the problem to run,
/// the full solver configuration, and where the report goes.
pub struct ResolvedExperiment {
    pub entry: BenchmarkEntry,
    pub mode: Mode,
    pub config: RunConfig,
    pub y_index_choice: YIndexChoice,
    pub output_path: PathBuf,
    pub policy_path: PathBuf,
}

/// Derives the path of the policy file written alongside a report.
pub fn policy_path_for(report_path: &Path) -> PathBuf {
    report_path.with_extension("policy.json")
}

/// Merges the file with registry defaults and command-line overrides.
///
/// `seed_override` and `out_override` come from `--seed` / `--out`;
/// `record_timing` from `--timing`.
pub fn resolve(
    file: &ExperimentFile,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
    record_timing: bool,
) -> Result<ResolvedExperiment, CliError> {
    let entry = benchmarks::build(&file.problem, file.case_id).map_err(CliError::from_core)?;
    let d = &entry.defaults;

    let natural = if entry.problem.is_mean_field() {
        Mode::Mfc
    } else {
        Mode::Socp
    };
    if let Some(mode) = file.mode {
        if mode != natural {
            return Err(CliError::config(format!(
                "problem `{}` runs in {} mode, but the experiment file says {}",
                entry.id,
                natural.as_str(),
                mode.as_str()
            )));
        }
    }
    let horizon = entry.problem.horizon();
    if let Some(t) = file.horizon {
        if (t - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(CliError::config(format!(
                "problem `{}` has a fixed horizon T={horizon}; the experiment file says T={t}",
                entry.id
            )));
        }
    }

    let y_index_choice = file.y_index.unwrap_or(YIndexChoice::Next);

    let mut config = d.to_run_config(seed_override.or(file.seed).unwrap_or(0));
    if let Some(v) = file.particles {
        config.particles = v;
    }
    if let Some(v) = file.steps {
        config.steps = v;
    }
    if let Some(v) = file.epochs {
        config.epochs = v;
    }
    if let Some(v) = file.hidden_size {
        config.hidden = v;
    }
    if let Some(v) = file.ridge_lambda {
        config.ridge_lambda = v;
    }
    if let Some(v) = file.clip_bound {
        config.clip_bound = v;
    }
    config.schedule = LearningSchedule::new(
        file.rho0.unwrap_or(d.rho0),
        file.decay_power.unwrap_or(d.decay_power),
    );
    config.y_index = y_index_choice.to_engine();
    // When the file shrinks or grows M without pinning eval_M, keep the
    // final estimate at the same scale instead of the registry default.
    config.eval_particles = file
        .eval_particles
        .or(file.particles)
        .unwrap_or(d.eval_particles);
    config.record_timing = record_timing;
    config.validate().map_err(CliError::from_core)?;

    let output_path = out_override
        .or_else(|| file.output_path.clone())
        .unwrap_or_else(|| default_output_path(entry.id, entry.case));
    let policy_path = policy_path_for(&output_path);

    Ok(ResolvedExperiment {
        entry,
        mode: natural,
        config,
        y_index_choice,
        output_path,
        policy_path,
    })
}

fn default_output_path(id: &str, case: Option<u32>) -> PathBuf {
    match case {
        Some(k) => PathBuf::from(format!("{id}_case{k}.csv")),
        None => PathBuf::from(format!("{id}.csv")),
    }
}

/// The JSON schema for `gpp probe-unbiasedness`: which scalar problem to
/// probe, how many time steps, and the Monte-Carlo budgets of the two
/// routes.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFile {
    pub problem: String,
    #[serde(default)]
    pub case_id: Option<u32>,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_outer: Option<usize>,
    #[serde(default)]
    pub n_inner: Option<usize>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub reference_particles: Option<usize>,
    #[serde(default)]
    pub negative_control: Option<bool>,
}

impl ProbeFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read `{}`: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!("invalid probe file `{}`: {e}", path.display()))
        })
    }
}
