//! Hamilton–Jacobi–Bellman benchmark with an exponential-transform oracle.
//!
//! Dynamics `dX = 2 sqrt(lambda) U dt + sqrt(2) dW` in dimension `d`,
//! running cost `|u|^2`, terminal cost `g`. The value function admits the
//! Cole–Hopf representation
//! `v(t,x) = -(1/lambda) ln E[exp(-lambda g(x + sqrt(2) W_{T-t}))]`,
//! estimated here by plain Monte Carlo with a log-sum-exp reduction and a
//! delta-method standard error.

use rand_chacha::ChaCha8Rng;

use crate::problem::{ControlProblem, InputMap, MeasureSummary, ZSample};
use crate::scalar::Scalar;
use crate::stochastics::SeedSpec;

/// Terminal cost choices for the HJB benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjbTerminal {
    /// `g(x) = ln((1 + |x|^2) / 2)`.
    LogQuadratic,
    /// `g(x) = (1/d) * sum_i [ sin(x_i - pi/2) + sin(1 / (pi/10 + x_i^2)) ]`.
    Oscillatory,
}

impl HjbTerminal {
    /// Terminal cost value.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            HjbTerminal::LogQuadratic => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                (0.5 * (1.0 + sq)).ln()
            }
            HjbTerminal::Oscillatory => {
                let d = x.len() as f64;
                let half_pi = std::f64::consts::FRAC_PI_2;
                let base = std::f64::consts::PI / 10.0;
                x.iter()
                    .map(|&v| (v - half_pi).sin() + (1.0 / (base + v * v)).sin())
                    .sum::<f64>()
                    / d
            }
        }
    }

    /// Gradient of the terminal cost.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        match self {
            HjbTerminal::LogQuadratic => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let scale = 2.0 / (1.0 + sq);
                for (o, &v) in out.iter_mut().zip(x.iter()) {
                    *o = scale * v;
                }
            }
            HjbTerminal::Oscillatory => {
                let d = x.len() as f64;
                let half_pi = std::f64::consts::FRAC_PI_2;
                let base = std::f64::consts::PI / 10.0;
                for (o, &v) in out.iter_mut().zip(x.iter()) {
                    let denom = base + v * v;
                    *o = ((v - half_pi).cos() - (1.0 / denom).cos() * 2.0 * v / (denom * denom))
                        / d;
                }
            }
        }
    }
}

/// Monte Carlo Cole–Hopf estimate of `v(T - tau, x)` together with a
/// delta-method standard error. `tau` is the remaining time; `tau = 0`
/// returns `(g(x), 0)` exactly.
pub fn cole_hopf_value(
    terminal: HjbTerminal,
    x: &[f64],
    lambda: f64,
    tau: f64,
    n_mc: usize,
    seed: SeedSpec,
) -> (f64, f64) {
    assert!(lambda > 0.0, "lambda must be positive");
    assert!(tau >= 0.0, "remaining time must be nonnegative");
    if tau == 0.0 {
        return (terminal.value(x), 0.0);
    }
    assert!(n_mc > 1, "need at least two samples for a standard error");

    let dim = x.len();
    let scale = (2.0 * tau).sqrt();
    let mut rng = seed.rng();
    let mut shifted = vec![0.0f64; dim];

    // First pass: store the exponents a_j = -lambda * g(x_j) so the
    // log-sum-exp reduction can subtract the exact maximum.
    let mut exponents = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        for (s, &xv) in shifted.iter_mut().zip(x.iter()) {
            *s = xv + scale * f64::standard_normal(&mut rng);
        }
        exponents.push(-lambda * terminal.value(&shifted));
    }
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &a in &exponents {
        let w = (a - max).exp();
        sum += w;
        sum_sq += w * w;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    let value = -(max + mean.ln()) / lambda;
    let se = var.sqrt() / (n.sqrt() * mean * lambda);
    (value, se)
}

/// The HJB control problem, generic over scalar type.
#[derive(Debug, Clone)]
pub struct HjbProblem {
    dim: usize,
    lambda: f64,
    horizon: f64,
    terminal: HjbTerminal,
    x0: Vec<f64>,
}

impl HjbProblem {
    pub fn new(dim: usize, lambda: f64, horizon: f64, terminal: HjbTerminal, x0: Vec<f64>) -> Self {
        assert_eq!(x0.len(), dim);
        assert!(lambda > 0.0 && horizon > 0.0);
        HjbProblem {
            dim,
            lambda,
            horizon,
            terminal,
            x0,
        }
    }

    /// Benchmark instance with the log-quadratic terminal cost, horizon 1,
    /// started at `a * (1, ..., 1)`.
    pub fn log_quadratic(dim: usize, lambda: f64, a: f64) -> Self {
        HjbProblem::new(dim, lambda, 1.0, HjbTerminal::LogQuadratic, vec![a; dim])
    }

    /// Benchmark instance with the oscillatory terminal cost at the given
    /// horizon, started at `a * (1, ..., 1)`.
    pub fn oscillatory(dim: usize, horizon: f64, a: f64) -> Self {
        HjbProblem::new(dim, 1.0, horizon, HjbTerminal::Oscillatory, vec![a; dim])
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn terminal(&self) -> HjbTerminal {
        self.terminal
    }

    /// Oracle value at the start state via [`cole_hopf_value`].
    pub fn oracle_value(&self, n_mc: usize, seed: SeedSpec) -> (f64, f64) {
        cole_hopf_value(self.terminal, &self.x0, self.lambda, self.horizon, n_mc, seed)
    }
}

impl<S: Scalar> ControlProblem<S> for HjbProblem {
    fn name(&self) -> &str {
        "hjb"
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
        S::c(self.horizon)
    }

    fn input_map(&self) -> InputMap {
        InputMap::Full
    }

    fn sample_initial(&self, _rng: &mut ChaCha8Rng, out: &mut [S]) {
        for (o, v) in out.iter_mut().zip(self.x0.iter()) {
            *o = S::c(*v);
        }
    }

    fn drift(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, u: &[S], out: &mut [S]) {
        let gain = S::c(2.0 * self.lambda.sqrt());
        for i in 0..self.dim {
            out[i] = gain * u[i];
        }
    }

    fn diffusion(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, _u: &[S], out: &mut [S]) {
        let c = S::c(std::f64::consts::SQRT_2);
        out.fill(S::zero());
        for i in 0..self.dim {
            out[i * self.dim + i] = c;
        }
    }

    fn running_cost(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, u: &[S]) -> S {
        u.iter().map(|v| *v * *v).sum()
    }

    fn terminal_cost(&self, x: &[S], _mu: &MeasureSummary<S>) -> S {
        // Terminal costs are cheap scalar maps; route through f64 to share
        // the oracle formulas exactly.
        let xf: Vec<f64> = x.iter().map(|&v| v.to_f64()).collect();
        S::c(self.terminal.value(&xf))
    }

    fn grad_terminal(&self, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        let xf: Vec<f64> = x.iter().map(|&v| v.to_f64()).collect();
        let mut g = vec![0.0f64; self.dim];
        self.terminal.grad(&xf, &mut g);
        for (o, v) in out.iter_mut().zip(g.iter()) {
            *o = S::c(*v);
        }
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
        out.fill(S::zero());
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
        let gain = S::c(2.0 * self.lambda.sqrt());
        let two = S::c(2.0);
        for i in 0..self.dim {
            out[i] = gain * y[i] + two * u[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::hamiltonian_partial_check;

    #[test]
    fn zero_remaining_time_returns_terminal_cost_exactly() {
        let x = vec![0.3, -1.2, 0.7];
        for terminal in [HjbTerminal::LogQuadratic, HjbTerminal::Oscillatory] {
            let (v, se) = cole_hopf_value(terminal, &x, 3.0, 0.0, 10, SeedSpec::new(1, 0, 0));
            assert_eq!(v, terminal.value(&x));
            assert_eq!(se, 0.0);
        }
    }

    #[test]
    fn small_lambda_limit_matches_plain_expectation() {
        // As lambda -> 0+ the risk-sensitive value tends to E[g(x + sqrt(2) W_tau)].
        let x = vec![0.2; 5];
        let seed = SeedSpec::new(42, 0, 0);
        let (v, se) = cole_hopf_value(HjbTerminal::LogQuadratic, &x, 1e-6, 0.5, 200_000, seed);

        // Independent direct estimate of the expectation.
        let mut rng = SeedSpec::new(43, 0, 0).rng();
        let scale = (2.0 * 0.5f64).sqrt();
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let n = 200_000;
        let mut buf = vec![0.0; 5];
        for k in 0..n {
            for (b, &xv) in buf.iter_mut().zip(x.iter()) {
                *b = xv + scale * f64::standard_normal(&mut rng);
            }
            let g = HjbTerminal::LogQuadratic.value(&buf);
            let delta = g - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (g - mean);
        }
        let se_direct = (m2 / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt();
        let tol = 4.0 * (se * se + se_direct * se_direct).sqrt() + 1e-6;
        assert!(
            (v - mean).abs() < tol,
            "cole-hopf {v} vs direct {mean}, tol {tol}"
        );
    }

    #[test]
    fn value_is_nonincreasing_in_lambda() {
        let x = vec![0.0; 10];
        let seed = SeedSpec::new(7, 0, 0);
        let (v1, _) = cole_hopf_value(HjbTerminal::LogQuadratic, &x, 1.0, 1.0, 50_000, seed);
        let (v5, _) = cole_hopf_value(HjbTerminal::LogQuadratic, &x, 5.0, 1.0, 50_000, seed);
        assert!(v1 > v5, "risk-sensitive value must decrease in lambda");
    }

    #[test]
    fn terminal_gradients_match_finite_differences() {
        let x = vec![0.4, -0.9, 0.05, 1.3];
        for terminal in [HjbTerminal::LogQuadratic, HjbTerminal::Oscillatory] {
            let mut grad = vec![0.0; 4];
            terminal.grad(&x, &mut grad);
            for i in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                let eps = 1e-6;
                xp[i] += eps;
                xm[i] -= eps;
                let fd = (terminal.value(&xp) - terminal.value(&xm)) / (2.0 * eps);
                assert!(
                    (fd - grad[i]).abs() < 1e-8,
                    "{terminal:?} component {i}: fd {fd} vs grad {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn hamiltonian_partials_are_consistent() {
        let problem = HjbProblem::log_quadratic(3, 5.0, 0.2);
        let report =
            hamiltonian_partial_check::<f64>(&problem, 20, 1e-4, SeedSpec::new(5, 0, 0));
        assert!(report.within(1e-7), "{report:?}");
    }

    #[test]
    fn repeat_estimates_agree_within_combined_error() {
        let x = vec![0.5; 8];
        let (v1, se1) =
            cole_hopf_value(HjbTerminal::Oscillatory, &x, 1.0, 1.0, 80_000, SeedSpec::new(11, 0, 0));
        let (v2, se2) =
            cole_hopf_value(HjbTerminal::Oscillatory, &x, 1.0, 1.0, 80_000, SeedSpec::new(12, 0, 0));
        let tol = 4.0 * (se1 * se1 + se2 * se2).sqrt();
        assert!((v1 - v2).abs() < tol, "{v1} vs {v2}, tol {tol}");
    }
}
