//! Sine-matching transport benchmark (degenerate two-dimensional problem
//! with a one-dimensional control).
//!
//! The first coordinate starts uniform on `[-2 pi, pi)` and is steered by
//! the control; the second starts at `sin` of the first and only diffuses.
//! With no running cost and terminal cost `(x1 - x2)^2 / 2`, the learned
//! control must transport the first coordinate onto the sine curve.

use rand_chacha::ChaCha8Rng;
use rand::Rng;

use crate::problem::{ControlProblem, InputMap, MeasureSummary, ZSample};
use crate::scalar::Scalar;

/// Model coefficients.
#[derive(Debug, Clone, Copy)]
pub struct SineParams {
    /// Diffusion level on both coordinates.
    pub sigma: f64,
    /// Horizon.
    pub horizon: f64,
}

impl SineParams {
    pub fn standard() -> Self {
        SineParams {
            sigma: 0.05,
            horizon: 0.5,
        }
    }
}

/// Expected cost of the zero control: the initial mismatch in closed form
/// (moments of `x - sin x` over the uniform initial law) plus the noise
/// accumulated in both coordinates.
pub fn zero_control_cost(p: &SineParams) -> f64 {
    // Over U[-2 pi, pi): E[x^2] = pi^2, E[x sin x] = -1/3, E[sin^2 x] = 1/2,
    // so E[(x - sin x)^2] = pi^2 + 7/6.
    let pi = std::f64::consts::PI;
    0.5 * (pi * pi + 7.0 / 6.0) + p.sigma * p.sigma * p.horizon
}

/// Direction the control must push the first coordinate at time zero:
/// the sign of `sin(x) - x`.
pub fn transport_direction(x: f64) -> f64 {
    (x.sin() - x).signum()
}

/// The sine-matching control problem, generic over scalar type.
#[derive(Debug, Clone)]
pub struct SineProblem {
    params: SineParams,
}

impl SineProblem {
    pub fn new(params: SineParams) -> Self {
        SineProblem { params }
    }

    pub fn standard() -> Self {
        SineProblem::new(SineParams::standard())
    }

    pub fn params(&self) -> &SineParams {
        &self.params
    }
}

impl<S: Scalar> ControlProblem<S> for SineProblem {
    fn name(&self) -> &str {
        "sine"
    }

    fn dim_state(&self) -> usize {
        2
    }

    fn dim_noise(&self) -> usize {
        2
    }

    fn dim_control(&self) -> usize {
        1
    }

    fn horizon(&self) -> S {
        S::c(self.params.horizon)
    }

    fn input_map(&self) -> InputMap {
        // The regression only sees the steered coordinate.
        InputMap::Coords(vec![0])
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng, out: &mut [S]) {
        let pi = std::f64::consts::PI;
        let x: f64 = -2.0 * pi + rng.gen::<f64>() * 3.0 * pi;
        out[0] = S::c(x);
        out[1] = S::c(x.sin());
    }

    fn drift(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, u: &[S], out: &mut [S]) {
        out[0] = u[0];
        out[1] = S::zero();
    }

    fn diffusion(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, _u: &[S], out: &mut [S]) {
        let s = S::c(self.params.sigma);
        out[0] = s;
        out[1] = S::zero();
        out[2] = S::zero();
        out[3] = s;
    }

    fn running_cost(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, _u: &[S]) -> S {
        S::zero()
    }

    fn terminal_cost(&self, x: &[S], _mu: &MeasureSummary<S>) -> S {
        let diff = x[0] - x[1];
        S::c(0.5) * diff * diff
    }

    fn grad_terminal(&self, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        let diff = x[0] - x[1];
        out[0] = diff;
        out[1] = -diff;
    }

    fn dx_hamiltonian(
        &self,
        _t: S,
        _x: &[S],
        _mu: &MeasureSummary<S>,
        _y: &[S],
        _z: ZSample<'_, S>,
        _u: &[S],
        out: &mut [S],
    ) {
        out[0] = S::zero();
        out[1] = S::zero();
    }

    fn du_hamiltonian(
        &self,
        _t: S,
        _x: &[S],
        _mu: &MeasureSummary<S>,
        y: &[S],
        _z: ZSample<'_, S>,
        _u: &[S],
        out: &mut [S],
    ) {
        out[0] = y[0];
    }
}
