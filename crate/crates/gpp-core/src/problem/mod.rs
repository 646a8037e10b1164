//! Problem interface shared by the particle engine, the solver, and the
//! benchmark definitions.
//!
//! A control problem supplies its coefficient functions
//! `b(t, x, mu, u)` (drift), `sigma(t, x, mu, u)` (diffusion), running cost
//! `f`, terminal cost `g`, and the first-order data the maximum principle
//! needs: the gradient of `g` and the partial derivatives of the Hamiltonian
//!
//! ```text
//! H(t, x, mu, y, z, u) = b . y + tr(sigma^T z) + f.
//! ```
//!
//! Mean-field problems additionally expose the interaction kernels that
//! differentiate `H` and `g` with respect to the measure argument; the
//! engine averages those kernels over the particle cloud. Distribution
//! dependence enters coefficients only through a [`MeasureSummary`] — a
//! small vector of ensemble averages — never through raw particle access.

mod check;
mod policy;

pub use check::{hamiltonian_partial_check, PartialCheckReport};
pub use policy::{
    load_policy_file, save_policy_file, FeedbackPolicy, InputMap, Policy, PolicySequence,
    ZeroPolicy, POLICY_FORMAT_VERSION,
};

use crate::scalar::Scalar;
use ndarray::ArrayView2;
use rand_chacha::ChaCha8Rng;

/// Ensemble statistics a problem's coefficients may depend on.
///
/// `mean_control` is populated only while controls for the current time step
/// are defined (it is empty at the terminal time), and `custom` carries
/// problem-declared scalar interactions beyond plain means.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary<S: Scalar> {
    /// Ensemble mean of the state vector.
    pub mean_state: Vec<S>,
    /// Ensemble mean of the control vector; empty if unavailable.
    pub mean_control: Vec<S>,
    /// Problem-declared extra summaries (see
    /// [`ControlProblem::custom_summaries`]).
    pub custom: Vec<S>,
}

impl<S: Scalar> MeasureSummary<S> {
    /// Summary with no information (used for problems without mean-field
    /// terms, whose coefficients ignore the measure argument).
    pub fn empty() -> Self {
        MeasureSummary {
            mean_state: Vec::new(),
            mean_control: Vec::new(),
            custom: Vec::new(),
        }
    }
}

/// Computes the plain-average summary of a particle cloud.
///
/// `states` is `(particles, d)`; `controls`, when given, is
/// `(particles, d1)`.
pub fn measure_summary<S: Scalar>(
    states: ArrayView2<S>,
    controls: Option<ArrayView2<S>>,
) -> MeasureSummary<S> {
    let m = S::c(states.nrows() as f64);
    let mean_state = states
        .axis_iter(ndarray::Axis(1))
        .map(|col| col.iter().copied().sum::<S>() / m)
        .collect();
    let mean_control = controls
        .map(|c| {
            c.axis_iter(ndarray::Axis(1))
                .map(|col| col.iter().copied().sum::<S>() / m)
                .collect()
        })
        .unwrap_or_default();
    MeasureSummary {
        mean_state,
        mean_control,
        custom: Vec::new(),
    }
}

/// Rank-one view of one particle's `Z` sample.
///
/// The sample-wise estimator defines `Z_n = Y_{n+1} (dW_n)^T / dt`, an outer
/// product that is never materialized: for state dimension 100 the full
/// tensor would dwarf memory, while every use in practice is a contraction.
#[derive(Debug, Clone, Copy)]
pub struct ZSample<'a, S: Scalar> {
    /// Left factor: the next-step adjoint `Y_{n+1}` (length `d`).
    pub y_next: &'a [S],
    /// Right factor: the Brownian increment `dW_n` (length `m`).
    pub dw: &'a [S],
    /// `1 / dt`.
    pub inv_dt: S,
}

impl<'a, S: Scalar> ZSample<'a, S> {
    /// Entry `Z[i][j] = Y_{n+1}[i] * dW[j] / dt`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> S {
        self.y_next[i] * self.dw[j] * self.inv_dt
    }

    /// The single entry of a scalar (`d = m = 1`) sample.
    #[inline]
    pub fn scalar(&self) -> S {
        debug_assert_eq!(self.y_next.len(), 1);
        debug_assert_eq!(self.dw.len(), 1);
        self.y_next[0] * self.dw[0] * self.inv_dt
    }

    /// Contraction `tr(sigma^T Z)` for a row-major `d x m` matrix `sigma`.
    pub fn trace_sigma_t(&self, sigma: &[S]) -> S {
        let m = self.dw.len();
        let mut acc = S::zero();
        for (i, &y) in self.y_next.iter().enumerate() {
            let row = &sigma[i * m..(i + 1) * m];
            let mut s = S::zero();
            for (j, &w) in self.dw.iter().enumerate() {
                s += row[j] * w;
            }
            acc += y * s;
        }
        acc * self.inv_dt
    }
}

/// Owned factors for building synthetic [`ZSample`]s (tests, probes,
/// derivative checks).
#[derive(Debug, Clone)]
pub struct ZData<S: Scalar> {
    /// Left factor.
    pub y_next: Vec<S>,
    /// Right factor.
    pub dw: Vec<S>,
    /// `1 / dt`.
    pub inv_dt: S,
}

impl<S: Scalar> ZData<S> {
    /// Borrowed view.
    pub fn sample(&self) -> ZSample<'_, S> {
        ZSample {
            y_next: &self.y_next,
            dw: &self.dw,
            inv_dt: self.inv_dt,
        }
    }
}

/// How a mean-field kernel depends on the evaluation point `x_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuKernelKind {
    /// No measure derivative at all.
    None,
    /// Kernel value is the same for every evaluation point, so the particle
    /// average collapses to one `O(M)` pass.
    ConstantInState,
    /// Kernel genuinely varies with the evaluation point; the engine falls
    /// back to the `O(M^2)` double loop.
    General,
}

/// Data of the "donor" particle `j` appearing inside mean-field kernels.
#[derive(Debug, Clone, Copy)]
pub struct DonorSample<'a, S: Scalar> {
    /// Donor state `X^j_n`.
    pub x: &'a [S],
    /// Donor next-step adjoint `Y^j_{n+1}`.
    pub y_next: &'a [S],
    /// Donor `Z^j_n` sample.
    pub z: ZSample<'a, S>,
    /// Donor control `u^j_n`.
    pub u: &'a [S],
}

/// A finite-horizon controlled diffusion with the derivative data required
/// by the sample-wise maximum-principle solver.
///
/// All slice arguments are dense vectors of the declared dimensions; the
/// diffusion matrix is row-major `d x m`. Implementations must be pure
/// functions of their arguments.
pub trait ControlProblem<S: Scalar>: Send + Sync {
    /// Short identifier used in reports.
    fn name(&self) -> &str;

    /// State dimension `d`.
    fn dim_state(&self) -> usize;
    /// Brownian dimension `m`.
    fn dim_noise(&self) -> usize;
    /// Control dimension `d1`.
    fn dim_control(&self) -> usize;
    /// Horizon `T`.
    fn horizon(&self) -> S;

    /// Whether coefficients read the state distribution.
    fn is_mean_field(&self) -> bool {
        false
    }

    /// Whether coefficients read the control distribution (extended
    /// mean-field control).
    fn uses_mean_control(&self) -> bool {
        false
    }

    /// Which state coordinates feed the feedback policy.
    fn input_map(&self) -> InputMap {
        InputMap::Full
    }

    /// Draws one initial state.
    fn sample_initial(&self, rng: &mut ChaCha8Rng, out: &mut [S]);

    /// Drift `b(t, x, mu, u)` into `out` (length `d`).
    fn drift(&self, t: S, x: &[S], mu: &MeasureSummary<S>, u: &[S], out: &mut [S]);

    /// Diffusion `sigma(t, x, mu, u)` into `out` (row-major `d x m`).
    fn diffusion(&self, t: S, x: &[S], mu: &MeasureSummary<S>, u: &[S], out: &mut [S]);

    /// Running cost `f(t, x, mu, u)`.
    fn running_cost(&self, t: S, x: &[S], mu: &MeasureSummary<S>, u: &[S]) -> S;

    /// Terminal cost `g(x, mu)`.
    fn terminal_cost(&self, x: &[S], mu: &MeasureSummary<S>) -> S;

    /// State gradient of the terminal cost into `out` (length `d`).
    fn grad_terminal(&self, x: &[S], mu: &MeasureSummary<S>, out: &mut [S]);

    /// State gradient of the Hamiltonian into `out` (length `d`).
    fn dx_hamiltonian(
        &self,
        t: S,
        x: &[S],
        mu: &MeasureSummary<S>,
        y: &[S],
        z: ZSample<'_, S>,
        u: &[S],
        out: &mut [S],
    );

    /// Control gradient of the Hamiltonian into `out` (length `d1`).
    fn du_hamiltonian(
        &self,
        t: S,
        x: &[S],
        mu: &MeasureSummary<S>,
        y: &[S],
        z: ZSample<'_, S>,
        u: &[S],
        out: &mut [S],
    );

    /// Shape of the measure derivative of `H`.
    fn dmu_h_kind(&self) -> MuKernelKind {
        MuKernelKind::None
    }

    /// Measure-derivative kernel of `H`: the contribution of donor particle
    /// `j` evaluated at state `x_at`, written into `out` (length `d`).
    ///
    /// With [`MuKernelKind::ConstantInState`] the engine calls this once per
    /// donor with `x_at` empty and the implementation must ignore it.
    fn dmu_h_kernel(
        &self,
        _t: S,
        _donor: DonorSample<'_, S>,
        _mu: &MeasureSummary<S>,
        _x_at: &[S],
        _out: &mut [S],
    ) {
    }

    /// Shape of the measure derivative of `g`.
    fn dmu_g_kind(&self) -> MuKernelKind {
        MuKernelKind::None
    }

    /// Measure-derivative kernel of `g` (same conventions as
    /// [`ControlProblem::dmu_h_kernel`]).
    fn dmu_g_kernel(&self, _donor_x: &[S], _mu: &MeasureSummary<S>, _x_at: &[S], _out: &mut [S]) {}

    /// Control-distribution term of the cost gradient, averaged over the
    /// cloud (extended mean-field control). Returns `None` when absent.
    fn dnu_gradient_mean(&self, _t: S, _mu: &MeasureSummary<S>) -> Option<Vec<S>> {
        None
    }

    /// Problem-declared extra measure summaries.
    fn custom_summaries(
        &self,
        _states: ArrayView2<S>,
        _controls: Option<ArrayView2<S>>,
    ) -> Vec<S> {
        Vec::new()
    }

    /// Whether an exact optimal feedback control is available.
    fn has_oracle_control(&self) -> bool {
        false
    }

    /// Exact optimal control `u*(t, x, mu)` into `out`, when available.
    fn oracle_control(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, _out: &mut [S]) {
        unimplemented!("problem has no control oracle")
    }
}

/// Evaluates the Hamiltonian `b . y + tr(sigma^T z) + f` from the problem's
/// coefficient functions (scratch-allocating; meant for checks and probes,
/// not hot loops).
pub fn hamiltonian<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    t: S,
    x: &[S],
    mu: &MeasureSummary<S>,
    y: &[S],
    z: ZSample<'_, S>,
    u: &[S],
) -> S {
    let d = problem.dim_state();
    let m = problem.dim_noise();
    let mut b = vec![S::zero(); d];
    problem.drift(t, x, mu, u, &mut b);
    let mut sigma = vec![S::zero(); d * m];
    problem.diffusion(t, x, mu, u, &mut sigma);
    let drift_dot = b.iter().zip(y.iter()).map(|(&bi, &yi)| bi * yi).sum::<S>();
    drift_dot + z.trace_sigma_t(&sigma) + problem.running_cost(t, x, mu, u)
}
