//! Linear–quadratic benchmark in arbitrary dimension.
//!
//! Dynamics `dX = (aX + bU) dt + c dW` with `X, U, W` all `d`-dimensional,
//! running cost `(q/2)|x|^2 + (r/2)|u|^2`, terminal cost `(s/2)|x|^2`.
//! Because every coefficient matrix is a multiple of the identity the value
//! function is `v(t,x) = p(t)|x|^2 / 2 + m(t)` with a scalar Riccati
//! equation for `p`, which this module solves in closed form.

use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use super::ode::{rk4, simpson, OdeGrid};
use crate::problem::{ControlProblem, InputMap, MeasureSummary, ZSample};
use crate::scalar::Scalar;

/// Scalar coefficients of the isotropic linear–quadratic problem.
#[derive(Debug, Clone, Copy)]
pub struct LqParams {
    /// State feedback coefficient in the drift (`A = a I`).
    pub a: f64,
    /// Control coefficient in the drift (`B = b I`).
    pub b: f64,
    /// Constant diffusion level (`sigma = c I`).
    pub c: f64,
    /// Running state-cost weight (`Q = q I`).
    pub q: f64,
    /// Running control-cost weight (`R = r I`).
    pub r: f64,
    /// Terminal cost weight (`S = s I`).
    pub s: f64,
    /// Horizon `T`.
    pub horizon: f64,
}

impl LqParams {
    /// Coefficients of the 100-dimensional benchmark configuration.
    pub fn standard() -> Self {
        LqParams {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            q: 2.0,
            r: 2.0,
            s: 1.0,
            horizon: 1.0,
        }
    }

    /// Roots `p^± = (a r ± sqrt(a^2 r^2 + q r b^2)) / (b^2 / 2) ...` of the
    /// stationary Riccati equation, plus the exponent rate, in the form used
    /// by [`riccati_p`]. Returns `(p_plus, p_minus, rate)` where the Riccati
    /// flow is `p' = (b^2 / (2 r)) (p - p_plus)(p - p_minus)` and
    /// `rate = (b^2 / (2 r)) (p_plus - p_minus)`.
    fn riccati_roots(&self) -> (f64, f64, f64) {
        // p' = -q - 2 a p + alpha p^2 with alpha = b^2 / r factors through
        // the roots of alpha p^2 - 2 a p - q = 0, namely (a ± disc) / alpha.
        let alpha = self.b * self.b / self.r;
        let disc = (self.a * self.a + alpha * self.q).sqrt();
        let r_plus = (self.a + disc) / alpha;
        let r_minus = (self.a - disc) / alpha;
        let rate = alpha * (r_plus - r_minus) / 2.0;
        (r_plus, r_minus, rate)
    }
}

/// Closed-form solution `p(t)` of the scalar Riccati equation
/// `p' = -q - 2 a p + (b^2 / r) p^2`, `p(T) = s`.
pub fn riccati_p(params: &LqParams, t: f64) -> f64 {
    let (p_plus, p_minus, rate) = params.riccati_roots();
    // (p - p_plus)/(p - p_minus) = gamma * exp(2 * rate * (t - T)).
    let gamma = (params.s - p_plus) / (params.s - p_minus);
    let w = gamma * (2.0 * rate * (t - params.horizon)).exp();
    (p_plus - p_minus * w) / (1.0 - w)
}

/// Independent check of [`riccati_p`]: backward RK4 integration of the same
/// Riccati equation from `p(T) = s`, returned as an ascending dense grid.
pub fn riccati_p_rk4(params: &LqParams, steps: usize) -> OdeGrid {
    let p = *params;
    rk4(
        move |_t, y, dy| {
            dy[0] = -p.q - 2.0 * p.a * y[0] + p.b * p.b / p.r * y[0] * y[0];
        },
        &[params.s],
        params.horizon,
        0.0,
        steps,
    )
}

/// Constant term `m(t)` of the value function: `m' = -(c^2 d / 2) p`,
/// `m(T) = 0`, evaluated by Simpson quadrature of the closed-form `p`.
pub fn lq_value_offset(params: &LqParams, dim: usize, t: f64) -> f64 {
    let integral = simpson(|s| riccati_p(params, s), t, params.horizon, 2_000);
    0.5 * params.c * params.c * dim as f64 * integral
}

/// Optimal value `v(t, x) = p(t) |x|^2 / 2 + m(t)`.
pub fn lq_value(params: &LqParams, dim: usize, t: f64, x: &[f64]) -> f64 {
    let sq: f64 = x.iter().map(|v| v * v).sum();
    0.5 * riccati_p(params, t) * sq + lq_value_offset(params, dim, t)
}

/// The benchmark problem itself, generic over scalar type.
#[derive(Debug, Clone)]
pub struct LqProblem {
    params: LqParams,
    dim: usize,
    x0: Vec<f64>,
}

impl LqProblem {
    /// `d`-dimensional instance with the standard coefficients and a
    /// deterministic start at `x0` (must have length `d`).
    pub fn new(dim: usize, params: LqParams, x0: Vec<f64>) -> Self {
        assert_eq!(x0.len(), dim, "initial state length must match dimension");
        LqProblem { params, dim, x0 }
    }

    /// The 100-dimensional benchmark started at the origin.
    pub fn standard(dim: usize) -> Self {
        LqProblem::new(dim, LqParams::standard(), vec![0.0; dim])
    }

    /// One-dimensional instance started at `x0`, used by adjoint probes.
    pub fn probe_1d(x0: f64) -> Self {
        LqProblem::new(1, LqParams::standard(), vec![x0])
    }

    /// Problem coefficients.
    pub fn params(&self) -> &LqParams {
        &self.params
    }
}

impl FromStr for LqProblem {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dim: usize = s.parse().map_err(|_| format!("bad dimension: {s}"))?;
        Ok(LqProblem::standard(dim))
    }
}

impl<S: Scalar> ControlProblem<S> for LqProblem {
    fn name(&self) -> &str {
        "lq"
    }

    fn dim_state(&self) -> usize {
        self.dim
    }

    fn dim_noise(&self) -> usize {
        self.dim
    }

    fn dim_control(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> S {
        S::c(self.params.horizon)
    }

    fn input_map(&self) -> InputMap {
        InputMap::Full
    }

    fn sample_initial(&self, _rng: &mut ChaCha8Rng, out: &mut [S]) {
        for (o, v) in out.iter_mut().zip(self.x0.iter()) {
            *o = S::c(*v);
        }
    }

    fn drift(&self, _t: S, x: &[S], _mu: &MeasureSummary<S>, u: &[S], out: &mut [S]) {
        let (a, b) = (S::c(self.params.a), S::c(self.params.b));
        for i in 0..self.dim {
            out[i] = a * x[i] + b * u[i];
        }
    }

    fn diffusion(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, _u: &[S], out: &mut [S]) {
        let c = S::c(self.params.c);
        out.fill(S::zero());
        for i in 0..self.dim {
            out[i * self.dim + i] = c;
        }
    }

    fn running_cost(&self, _t: S, x: &[S], _mu: &MeasureSummary<S>, u: &[S]) -> S {
        let half = S::c(0.5);
        let xs: S = x.iter().map(|v| *v * *v).sum();
        let us: S = u.iter().map(|v| *v * *v).sum();
        half * (S::c(self.params.q) * xs + S::c(self.params.r) * us)
    }

    fn terminal_cost(&self, x: &[S], _mu: &MeasureSummary<S>) -> S {
        let xs: S = x.iter().map(|v| *v * *v).sum();
        S::c(0.5 * self.params.s) * xs
    }

    fn grad_terminal(&self, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        let s = S::c(self.params.s);
        for i in 0..self.dim {
            out[i] = s * x[i];
        }
    }

    fn dx_hamiltonian(
        &self,
        _t: S,
        x: &[S],
        _mu: &MeasureSummary<S>,
        y: &[S],
        _z: ZSample<'_, S>,
        _u: &[S],
        out: &mut [S],
    ) {
        let (a, q) = (S::c(self.params.a), S::c(self.params.q));
        for i in 0..self.dim {
            out[i] = a * y[i] + q * x[i];
        }
    }

    fn du_hamiltonian(
        &self,
        _t: S,
        _x: &[S],
        _mu: &MeasureSummary<S>,
        y: &[S],
        _z: ZSample<'_, S>,
        u: &[S],
        out: &mut [S],
    ) {
        let (b, r) = (S::c(self.params.b), S::c(self.params.r));
        for i in 0..self.dim {
            out[i] = b * y[i] + r * u[i];
        }
    }

    fn has_oracle_control(&self) -> bool {
        true
    }

    fn oracle_control(&self, t: S, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        let gain = -self.params.b / self.params.r * riccati_p(&self.params, t.to_f64());
        let g = S::c(gain);
        for i in 0..self.dim {
            out[i] = g * x[i];
        }
    }
}
