//! The outer projected-gradient training loop.
//!
//! One epoch: simulate a particle ensemble under the current policy with
//! fresh Brownian draws, run the backward adjoint pass, form per-particle
//! regression targets `u_n(X_n) - rho_k * grad_n`, and refit every time
//! step's feedback model on its frozen random-feature basis.
//!
//! [`solve`] runs the loop; [`estimate_cost`] and [`control_l2_error`]
//! evaluate a policy on independent streams.

use std::time::Instant;

use ndarray::{Array2, Zip};

use crate::engine::{self, ParticleEnsemble, YIndex};
use crate::error::{Error, Result};
use crate::features::{self, Activation, RandomFeatureModel, RidgeSpec};
use crate::problem::{ControlProblem, Policy, PolicySequence};
use crate::scalar::Scalar;
use crate::stochastics::{purpose, SeedSpec};

/// Step-size schedule `rho_k = rho0 * k^(-decay_power)`, `k` 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningSchedule {
    /// First-epoch rate `rho_1`.
    pub rho0: f64,
    /// Polynomial decay exponent, in `[0, 1]` (0 keeps the rate constant).
    pub decay_power: f64,
}

impl LearningSchedule {
    /// Schedule `rho_k = rho0 * k^(-decay_power)`.
    pub fn new(rho0: f64, decay_power: f64) -> Self {
        LearningSchedule { rho0, decay_power }
    }

    /// The rate of (1-based) `epoch`.
    pub fn rate(&self, epoch: usize) -> f64 {
        debug_assert!(epoch >= 1, "epochs are 1-based");
        self.rho0 * (epoch as f64).powf(-self.decay_power)
    }

    fn validate(&self) -> Result<()> {
        if !self.rho0.is_finite() || self.rho0 < 0.0 {
            return Err(Error::invalid(
                "rho0",
                format!("must be finite and >= 0, got {}", self.rho0),
            ));
        }
        if !(0.0..=1.0).contains(&self.decay_power) {
            return Err(Error::invalid(
                "decay_power",
                format!("must lie in [0, 1], got {}", self.decay_power),
            ));
        }
        Ok(())
    }
}

/// Configuration of one training run.
///
/// Scalar-valued knobs are plain `f64` and are converted to the working
/// precision inside [`solve`].
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Particles simulated per epoch (`M`).
    pub particles: usize,
    /// Time steps of the control grid (`N`).
    pub steps: usize,
    /// Gradient epochs (`K`).
    pub epochs: usize,
    /// Hidden width of every per-step feature map (`L`).
    pub hidden: usize,
    /// Feature nonlinearity.
    pub activation: Activation,
    /// Ridge penalty of every refit.
    pub ridge_lambda: f64,
    /// Symmetric clamp on model outputs.
    pub clip_bound: f64,
    /// Learning-rate schedule.
    pub schedule: LearningSchedule,
    /// Which adjoint feeds the gradient target: `Y_{n+1}` (default) or `Y_n`.
    pub y_index: YIndex,
    /// Master seed; every stream the run touches is derived from it.
    pub master_seed: u64,
    /// Particles of the final independent cost estimate.
    pub eval_particles: usize,
    /// Euler substeps per policy step in the final cost estimate.
    pub eval_substeps: usize,
    /// Record wall-clock seconds per epoch (off writes 0.0, keeping
    /// reports byte-stable).
    pub record_timing: bool,
}

impl RunConfig {
    /// A run with the given loop sizes and defaults for the rest: tanh
    /// features, ridge `1e-8`, clip `50`, `rho_k = 0.4 / sqrt(k)`,
    /// `Y_{n+1}` targets, seed 0, evaluation at training size on the
    /// training grid, timing off.
    pub fn new(particles: usize, steps: usize, epochs: usize, hidden: usize) -> Self {
        RunConfig {
            particles,
            steps,
            epochs,
            hidden,
            activation: Activation::Tanh,
            ridge_lambda: 1e-8,
            clip_bound: 50.0,
            schedule: LearningSchedule::new(0.4, 0.5),
            y_index: YIndex::Next,
            master_seed: 0,
            eval_particles: particles,
            eval_substeps: 1,
            record_timing: false,
        }
    }

    /// Checks that counts, rates and bounds are usable before a run starts.
    /// [`solve`] calls this itself; callers assembling configurations from
    /// external input can validate eagerly for earlier errors.
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("particles", self.particles, 2),
            ("steps", self.steps, 1),
            ("epochs", self.epochs, 1),
            ("hidden", self.hidden, 1),
            ("eval_particles", self.eval_particles, 2),
            ("eval_substeps", self.eval_substeps, 1),
        ];
        for (name, value, least) in counts {
            if value < least {
                return Err(Error::invalid(
                    name,
                    format!("must be at least {least}, got {value}"),
                ));
            }
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            return Err(Error::invalid(
                "ridge_lambda",
                format!("must be finite and >= 0, got {}", self.ridge_lambda),
            ));
        }
        if !self.clip_bound.is_finite() || self.clip_bound <= 0.0 {
            return Err(Error::invalid(
                "clip_bound",
                format!("must be finite and > 0, got {}", self.clip_bound),
            ));
        }
        self.schedule.validate()
    }
}

/// Metrics of one completed epoch. Cost and error describe the policy
/// *entering* the epoch, so record 1 reports the zero policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Wall-clock seconds spent in the epoch (0.0 when timing is off).
    pub wall_seconds: f64,
    /// Training-ensemble estimate of the entering policy's cost.
    pub cost: f64,
    /// Standard error of `cost`.
    pub cost_se: f64,
    /// Relative L2 control error against the problem's oracle control,
    /// when the problem has one.
    pub l2_error: Option<f64>,
}

/// Why a run stopped before its last epoch.
#[derive(Debug, Clone)]
pub struct Abort {
    /// 1-based epoch that failed; its update was rolled back.
    pub epoch: usize,
    /// Failure description (includes the time step where known).
    pub message: String,
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct RunReport<S: Scalar> {
    /// One record per completed epoch (fewer than `epochs` only on abort).
    pub records: Vec<EpochRecord>,
    /// The trained policy: the last one whose epoch completed.
    pub policy: PolicySequence<S>,
    /// Independent cost estimate of `policy` (NaN if evaluation failed).
    pub final_cost: f64,
    /// Standard error of `final_cost`.
    pub final_cost_se: f64,
    /// Set when the run stopped early.
    pub abort: Option<Abort>,
}

/// A Monte-Carlo cost estimate: sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    /// Mean of the per-path costs.
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
}

/// L2 distance between a policy and the oracle control along simulated
/// paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlError {
    /// `sqrt( (1/(N M)) sum_{n,i} |u_n(X^i_n) - u*(t_n, X^i_n, mu_n)|^2 )`.
    pub absolute: f64,
    /// `absolute` divided by the root mean square of the oracle control
    /// itself (NaN when the oracle vanishes on the whole sample).
    pub relative: f64,
}

/// Runs the projected-gradient loop on `problem`.
///
/// Per epoch `k = 1..=K`: simulate `particles` paths under the current
/// policy (fresh initial-state and Brownian substreams keyed by `k`), run
/// the backward adjoint pass, then for every step `n` regress the targets
/// `u_n(X^i_n) - rho_k * grad_n(i)` onto the step's frozen feature basis.
/// `grad_n` is the control gradient of the Hamiltonian (plus the mean
/// control-law term for problems that declare one), with `Y_{n+1}` or `Y_n`
/// selected by [`RunConfig::y_index`].
///
/// Any non-finite value or failed fit aborts training: the failing epoch's
/// update is rolled back, [`RunReport::abort`] is set, and the report keeps
/// the last valid policy. The final cost is estimated on independent
/// evaluation streams via [`estimate_cost`] with
/// [`RunConfig::eval_particles`] paths and [`RunConfig::eval_substeps`]
/// Euler substeps per policy step.
pub fn solve<S: Scalar>(problem: &dyn ControlProblem<S>, config: &RunConfig) -> Result<RunReport<S>> {
    config.validate()?;
    let input_map = problem.input_map();
    let input_dim = input_map.input_dim(problem.dim_state());
    let dt = problem.horizon() / S::c(config.steps as f64);
    let mut policy = PolicySequence::zero(
        SeedSpec::new(config.master_seed, purpose::FEATURES, 0),
        config.steps,
        dt,
        input_dim,
        problem.dim_control(),
        config.hidden,
        config.activation,
        S::c(config.clip_bound),
        input_map,
    );

    let mut records = Vec::with_capacity(config.epochs);
    let mut abort = None;
    for epoch in 1..=config.epochs {
        let started = config.record_timing.then(Instant::now);
        match run_epoch(problem, &policy, config, epoch) {
            Ok(outcome) => {
                policy.models = outcome.models;
                records.push(EpochRecord {
                    epoch,
                    wall_seconds: started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
                    cost: outcome.cost,
                    cost_se: outcome.cost_se,
                    l2_error: outcome.l2_error,
                });
            }
            Err(err) => {
                abort = Some(Abort {
                    epoch,
                    message: err.to_string(),
                });
                break;
            }
        }
    }

    let (final_cost, final_cost_se) = match estimate_cost(
        problem,
        &policy,
        config.eval_particles,
        config.steps,
        config.eval_substeps,
        config.master_seed,
        0,
    ) {
        Ok(est) => (est.mean, est.se),
        Err(err) => {
            if abort.is_none() {
                abort = Some(Abort {
                    epoch: config.epochs,
                    message: format!("final evaluation failed: {err}"),
                });
            }
            (f64::NAN, f64::NAN)
        }
    };

    Ok(RunReport {
        records,
        policy,
        final_cost,
        final_cost_se,
        abort,
    })
}

struct EpochOutcome<S: Scalar> {
    models: Vec<RandomFeatureModel<S>>,
    cost: f64,
    cost_se: f64,
    l2_error: Option<f64>,
}

fn run_epoch<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    policy: &PolicySequence<S>,
    config: &RunConfig,
    epoch: usize,
) -> Result<EpochOutcome<S>> {
    let stamp = |e: Error| e.at_epoch(epoch);
    let substream = epoch as u64;
    let mut ens = engine::simulate_forward(
        problem,
        policy,
        config.particles,
        config.steps,
        SeedSpec::new(config.master_seed, purpose::TRAIN_INITIAL, substream),
        SeedSpec::new(config.master_seed, purpose::TRAIN_BROWNIAN, substream),
    )
    .map_err(stamp)?;
    engine::backward_adjoint(problem, &mut ens).map_err(stamp)?;

    let costs = engine::path_costs(problem, &ens);
    let (cost, cost_se) = engine::mean_and_se(&costs);
    let l2_error = ensemble_control_error(problem, &ens).map(|e| e.relative);

    let rho = S::c(config.schedule.rate(epoch));
    let ridge = RidgeSpec::new(S::c(config.ridge_lambda));
    let clip = S::c(config.clip_bound);
    let d1 = problem.dim_control();
    let mut grad = Array2::<S>::zeros((config.particles, d1));
    let mut targets = Array2::<S>::zeros((config.particles, d1));
    let mut models = Vec::with_capacity(config.steps);
    for n in 0..config.steps {
        engine::control_gradient_at(problem, &ens, n, config.y_index, grad.view_mut())
            .map_err(stamp)?;
        Zip::from(&mut targets)
            .and(ens.controls_at(n))
            .and(&grad)
            .for_each(|target, &u, &g| *target = u - rho * g);
        if !targets.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                quantity: "regression target",
                epoch,
                step: n,
            });
        }
        let inputs = policy.input_map.select(ens.states_at(n));
        let model = features::project_l2(
            &policy.models[n].feature_map,
            inputs.view(),
            targets.view(),
            ridge,
            clip,
        )?;
        models.push(model);
    }

    Ok(EpochOutcome {
        models,
        cost: cost.to_f64(),
        cost_se: cost_se.to_f64(),
        l2_error,
    })
}

/// L2 control error of the controls stored in an ensemble against the
/// problem's oracle, or `None` when the problem has no oracle.
fn ensemble_control_error<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ens: &ParticleEnsemble<S>,
) -> Option<ControlError> {
    if !problem.has_oracle_control() {
        return None;
    }
    let d1 = problem.dim_control();
    let mut oracle = vec![S::zero(); d1];
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for n in 0..ens.steps() {
        let t = ens.time(n);
        let mu = ens.mu_at(n);
        let states = ens.states_at(n);
        let controls = ens.controls_at(n);
        for i in 0..ens.particles() {
            let x = states.row(i);
            problem.oracle_control(t, x.to_slice().expect("contiguous row"), mu, &mut oracle);
            for k in 0..d1 {
                let exact = oracle[k].to_f64();
                let diff = (controls[[i, k]] - oracle[k]).to_f64();
                num += diff * diff;
                den += exact * exact;
            }
        }
    }
    let samples = (ens.steps() * ens.particles()) as f64;
    Some(ControlError {
        absolute: (num / samples).sqrt(),
        relative: if den > 0.0 { (num / den).sqrt() } else { f64::NAN },
    })
}

/// Routes fine-grid step `n` to the wrapped policy's step `n / substeps`,
/// so a policy trained on a coarse grid can drive a finer simulation while
/// each step's feedback rule stays in charge of its whole step.
struct SubstepPolicy<'a, S: Scalar> {
    inner: &'a dyn Policy<S>,
    substeps: usize,
}

impl<S: Scalar> Policy<S> for SubstepPolicy<'_, S> {
    fn dim_control(&self) -> usize {
        self.inner.dim_control()
    }

    fn eval_batch(
        &self,
        step: usize,
        t: S,
        states: ndarray::ArrayView2<S>,
        mu: &crate::problem::MeasureSummary<S>,
        out: ndarray::ArrayViewMut2<S>,
    ) {
        self.inner.eval_batch(step / self.substeps, t, states, mu, out);
    }

    fn eval_one(
        &self,
        step: usize,
        t: S,
        x: &[S],
        mu: &crate::problem::MeasureSummary<S>,
        out: &mut [S],
    ) {
        self.inner.eval_one(step / self.substeps, t, x, mu, out);
    }
}

/// Estimates `J(policy)` by fresh forward simulation on independent
/// evaluation streams (substream `substream`): mean and standard error of
/// `sum_n f(t_n, X_n, mu_n, u_n) dt + g(X_N, mu_N)` over `particles` paths.
///
/// With `substeps >= 2` the simulation runs on a grid `substeps` times
/// finer than the policy's `steps`-point grid, re-evaluating step `n`'s
/// feedback rule at the current state throughout `[t_n, t_{n+1})`. That
/// measures the continuous-time cost of the learned feedback rather than
/// the coarse-grid Euler functional it was trained on.
pub fn estimate_cost<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    policy: &dyn Policy<S>,
    particles: usize,
    steps: usize,
    substeps: usize,
    master_seed: u64,
    substream: u64,
) -> Result<CostEstimate> {
    if particles < 2 {
        return Err(Error::invalid("particles", "need at least 2 paths"));
    }
    if steps == 0 || substeps == 0 {
        return Err(Error::invalid("steps", "steps and substeps must be >= 1"));
    }
    let refined = SubstepPolicy {
        inner: policy,
        substeps,
    };
    let ens = engine::simulate_forward(
        problem,
        &refined,
        particles,
        steps * substeps,
        SeedSpec::new(master_seed, purpose::EVAL_INITIAL, substream),
        SeedSpec::new(master_seed, purpose::EVAL_BROWNIAN, substream),
    )?;
    let costs = engine::path_costs(problem, &ens);
    let (mean, se) = engine::mean_and_se(&costs);
    Ok(CostEstimate {
        mean: mean.to_f64(),
        se: se.to_f64(),
    })
}

/// Simulates `particles` fresh paths under `policy` on independent
/// evaluation streams and reports the L2 gap between the simulated controls
/// and the problem's oracle control along those paths.
pub fn control_l2_error<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    policy: &dyn Policy<S>,
    particles: usize,
    steps: usize,
    master_seed: u64,
    substream: u64,
) -> Result<ControlError> {
    if !problem.has_oracle_control() {
        return Err(Error::Config(format!(
            "problem `{}` has no oracle control",
            problem.name()
        )));
    }
    let ens = engine::simulate_forward(
        problem,
        policy,
        particles,
        steps,
        SeedSpec::new(master_seed, purpose::EVAL_INITIAL, substream),
        SeedSpec::new(master_seed, purpose::EVAL_BROWNIAN, substream),
    )?;
    Ok(ensemble_control_error(problem, &ens).expect("oracle availability checked above"))
}
