//! Optimal liquidation benchmark with price impact through the mean
//! control (extended mean-field interaction via the control law).
//!
//! Dynamics `dX = alpha dt + sigma dW`, running cost
//! `(c_alpha/2) alpha^2 + (c_X/2) x^2 - gamma x E[alpha]`, terminal cost
//! `(c_g/2) x^2`. The optimal control is affine,
//! `alpha*(t, x) = -(eta_t x + (chi_t - gamma) m_t) / c_alpha`, where
//! `eta, chi` solve backward Riccati-type ODEs and `m_t = E[X_t]`
//! propagates forward; this module integrates that system once at
//! construction and exposes dense-grid lookups.

use rand_chacha::ChaCha8Rng;

use super::ode::{rk4, OdeGrid};
use crate::problem::{ControlProblem, InputMap, MeasureSummary, ZSample};
use crate::scalar::Scalar;

/// Model coefficients.
#[derive(Debug, Clone, Copy)]
pub struct PriceImpactParams {
    /// Trading-rate penalty (must be positive).
    pub c_alpha: f64,
    /// Inventory penalty.
    pub c_x: f64,
    /// Price-impact strength (interaction through the mean control).
    pub gamma: f64,
    /// Terminal inventory penalty.
    pub c_g: f64,
    /// Diffusion level.
    pub sigma: f64,
    /// Horizon.
    pub horizon: f64,
    /// Initial inventory mean.
    pub x0_mean: f64,
    /// Initial inventory variance.
    pub x0_var: f64,
}

impl PriceImpactParams {
    /// The benchmark configuration (initial law `N(5.0, 0.3)`, variance
    /// convention).
    pub fn standard() -> Self {
        PriceImpactParams {
            c_alpha: 2.0,
            c_x: 2.0,
            gamma: 1.0,
            c_g: 0.3,
            sigma: 0.5,
            horizon: 1.0,
            x0_mean: 5.0,
            x0_var: 0.3,
        }
    }

    /// Same model with the interaction switched off (`gamma = 0`), which
    /// reduces to a scalar linear-quadratic problem.
    pub fn without_interaction() -> Self {
        PriceImpactParams {
            gamma: 0.0,
            ..Self::standard()
        }
    }
}

/// Closed-form solution of the `eta` Riccati equation
/// `eta' = (eta^2 - c_alpha c_x)/c_alpha`, `eta(T) = c_g` (independent of
/// `gamma` and `chi`).
pub fn eta_closed_form(p: &PriceImpactParams, t: f64) -> f64 {
    let a = (p.c_alpha * p.c_x).sqrt();
    let th = (a * (p.horizon - t) / p.c_alpha).tanh();
    a * (p.c_g + a * th) / (a + p.c_g * th)
}

/// Dense solution of the full forward-backward oracle system.
#[derive(Debug, Clone)]
pub struct PriceImpactOracle {
    params: PriceImpactParams,
    /// Backward grid: components `(eta, chi)`.
    backward: OdeGrid,
    /// Forward grid: components `(m, Sigma, running cost integral)`.
    forward: OdeGrid,
    /// Optimal total cost.
    value: f64,
}

impl PriceImpactOracle {
    /// Integrates the oracle ODEs with `steps` RK4 steps each way.
    pub fn new(params: PriceImpactParams, steps: usize) -> Self {
        assert!(params.c_alpha > 0.0, "c_alpha must be positive");
        let p = params;
        // Backward: (eta, chi) from t = T down to 0.
        let backward = rk4(
            move |_t, y, dy| {
                let (eta, chi) = (y[0], y[1]);
                dy[0] = (eta * eta - p.c_alpha * p.c_x) / p.c_alpha;
                dy[1] = (p.gamma - chi) * (p.gamma - 2.0 * eta - chi) / p.c_alpha;
            },
            &[p.c_g, 0.0],
            p.horizon,
            0.0,
            steps,
        );
        // Forward: (m, Sigma, J_run) from 0 to T, reading eta/chi off the
        // backward grid.
        let bw = backward.clone();
        let forward = rk4(
            move |t, y, dy| {
                let (m, var) = (y[0], y[1]);
                let eta = bw.interp(t, 0);
                let chi = bw.interp(t, 1);
                let mean_alpha = (p.gamma - eta - chi) * m / p.c_alpha;
                let e_alpha_sq = (eta / p.c_alpha) * (eta / p.c_alpha) * var
                    + mean_alpha * mean_alpha;
                dy[0] = mean_alpha;
                dy[1] = -2.0 * eta / p.c_alpha * var + p.sigma * p.sigma;
                dy[2] = 0.5 * p.c_alpha * e_alpha_sq + 0.5 * p.c_x * (var + m * m)
                    - p.gamma * m * mean_alpha;
            },
            &[p.x0_mean, p.x0_var, 0.0],
            0.0,
            p.horizon,
            steps,
        );
        let last = forward.values.last().unwrap();
        let value = last[2] + 0.5 * p.c_g * (last[1] + last[0] * last[0]);
        PriceImpactOracle {
            params,
            backward,
            forward,
            value,
        }
    }

    pub fn params(&self) -> &PriceImpactParams {
        &self.params
    }

    pub fn eta(&self, t: f64) -> f64 {
        self.backward.interp(t, 0)
    }

    pub fn chi(&self, t: f64) -> f64 {
        self.backward.interp(t, 1)
    }

    /// Population mean `m_t = E[X_t]` under the optimal control.
    pub fn mean_state(&self, t: f64) -> f64 {
        self.forward.interp(t, 0)
    }

    /// Population variance under the optimal control.
    pub fn var_state(&self, t: f64) -> f64 {
        self.forward.interp(t, 1)
    }

    /// Optimal feedback `alpha*(t, x)`.
    pub fn control(&self, t: f64, x: f64) -> f64 {
        let p = &self.params;
        -(self.eta(t) * x + (self.chi(t) - p.gamma) * self.mean_state(t)) / p.c_alpha
    }

    /// Optimal total cost.
    pub fn value(&self) -> f64 {
        self.value
    }
}

/// The price-impact control problem, generic over scalar type. Holds its
/// oracle so the optimal feedback is available as a reference control.
#[derive(Debug, Clone)]
pub struct PriceImpactProblem {
    oracle: PriceImpactOracle,
}

impl PriceImpactProblem {
    pub fn new(params: PriceImpactParams) -> Self {
        PriceImpactProblem {
            oracle: PriceImpactOracle::new(params, 8_000),
        }
    }

    pub fn standard() -> Self {
        PriceImpactProblem::new(PriceImpactParams::standard())
    }

    pub fn params(&self) -> &PriceImpactParams {
        self.oracle.params()
    }

    pub fn oracle(&self) -> &PriceImpactOracle {
        &self.oracle
    }
}

impl<S: Scalar> ControlProblem<S> for PriceImpactProblem {
    fn name(&self) -> &str {
        "priceimpact"
    }

    fn dim_state(&self) -> usize {
        1
    }

    fn dim_noise(&self) -> usize {
        1
    }

    fn dim_control(&self) -> usize {
        1
    }

    fn horizon(&self) -> S {
        S::c(self.params().horizon)
    }

    fn is_mean_field(&self) -> bool {
        true
    }

    fn uses_mean_control(&self) -> bool {
        true
    }

    fn input_map(&self) -> InputMap {
        InputMap::Full
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng, out: &mut [S]) {
        let p = self.params();
        out[0] = S::c(p.x0_mean + p.x0_var.sqrt() * f64::standard_normal(rng));
    }

    fn drift(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, u: &[S], out: &mut [S]) {
        out[0] = u[0];
    }

    fn diffusion(&self, _t: S, _x: &[S], _mu: &MeasureSummary<S>, _u: &[S], out: &mut [S]) {
        out[0] = S::c(self.params().sigma);
    }

    fn running_cost(&self, _t: S, x: &[S], mu: &MeasureSummary<S>, u: &[S]) -> S {
        let p = self.params();
        S::c(0.5 * p.c_alpha) * u[0] * u[0] + S::c(0.5 * p.c_x) * x[0] * x[0]
            - S::c(p.gamma) * x[0] * mu.mean_control[0]
    }

    fn terminal_cost(&self, x: &[S], _mu: &MeasureSummary<S>) -> S {
        S::c(0.5 * self.params().c_g) * x[0] * x[0]
    }

    fn grad_terminal(&self, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        out[0] = S::c(self.params().c_g) * x[0];
    }

    fn dx_hamiltonian(
        &self,
        _t: S,
        x: &[S],
        mu: &MeasureSummary<S>,
        _y: &[S],
        _z: ZSample<'_, S>,
        _u: &[S],
        out: &mut [S],
    ) {
        let p = self.params();
        out[0] = S::c(p.c_x) * x[0] - S::c(p.gamma) * mu.mean_control[0];
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
        out[0] = y[0] + S::c(self.params().c_alpha) * u[0];
    }

    fn dnu_gradient_mean(&self, _t: S, mu: &MeasureSummary<S>) -> Option<Vec<S>> {
        // Derivative of the interaction term through the control law: each
        // donor's -gamma x E[alpha] contributes -gamma E[X] to every
        // particle's control gradient.
        Some(vec![-S::c(self.params().gamma) * mu.mean_state[0]])
    }

    fn has_oracle_control(&self) -> bool {
        true
    }

    fn oracle_control(&self, t: S, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        out[0] = S::c(self.oracle.control(t.to_f64(), x[0].to_f64()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::hamiltonian_partial_check;
    use crate::stochastics::SeedSpec;

    #[test]
    fn eta_terminal_condition_holds() {
        let p = PriceImpactParams::standard();
        assert!((eta_closed_form(&p, p.horizon) - p.c_g).abs() < 1e-12);
        let oracle = PriceImpactOracle::new(p, 2_000);
        assert!((oracle.eta(p.horizon) - p.c_g).abs() < 1e-12);
        assert!(oracle.chi(p.horizon).abs() < 1e-12);
    }

    #[test]
    fn eta_rk4_matches_closed_form_on_grid_nodes() {
        let p = PriceImpactParams::standard();
        let oracle = PriceImpactOracle::new(p, 4_000);
        for k in 0..=100 {
            let t = k as f64 / 100.0 * p.horizon;
            // Sample exactly on integration nodes (4000 is a multiple of 100)
            // so only the integrator error is measured.
            let diff = (oracle.eta(t) - eta_closed_form(&p, t)).abs();
            assert!(diff < 1e-8, "t={t}: |rk4 - closed form| = {diff}");
        }
    }

    #[test]
    fn no_interaction_reduces_to_scalar_lq() {
        // gamma = 0: chi vanishes and the value has the LQ closed form
        // E[v(0, X_0)] = eta_0 (m^2 + Var)/2 + zeta_0, zeta' = -sigma^2 eta / 2.
        let p = PriceImpactParams::without_interaction();
        let oracle = PriceImpactOracle::new(p, 8_000);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!(oracle.chi(t).abs() < 1e-10, "chi({t}) = {}", oracle.chi(t));
        }
        let zeta0 = 0.5
            * p.sigma
            * p.sigma
            * super::super::ode::simpson(|t| eta_closed_form(&p, t), 0.0, p.horizon, 2_000);
        let expected = 0.5 * eta_closed_form(&p, 0.0) * (p.x0_mean * p.x0_mean + p.x0_var) + zeta0;
        let rel = (oracle.value() - expected).abs() / expected.abs();
        assert!(rel < 1e-7, "value {} vs LQ closed form {expected}", oracle.value());
    }

    #[test]
    fn zero_cost_coefficients_give_zero_control() {
        let p = PriceImpactParams {
            c_x: 0.0,
            c_g: 0.0,
            gamma: 0.0,
            ..PriceImpactParams::standard()
        };
        let oracle = PriceImpactOracle::new(p, 1_000);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!(oracle.eta(t).abs() < 1e-12);
            assert!(oracle.control(t, 3.0).abs() < 1e-12);
        }
        // Nothing penalizes inventory, so the optimal cost is zero.
        assert!(oracle.value().abs() < 1e-12);
    }

    #[test]
    fn crowding_increases_the_optimal_cost() {
        // Everyone starts long and the crowd sells, so the impact term
        // -gamma x E[alpha] is a positive cost on remaining inventory.
        // Provably V_0 <= V_gamma + gamma (m_T^2 - m_0^2)/2 and the mean is
        // net liquidated (m_T < m_0), hence V_gamma > V_0 here.
        let with = PriceImpactOracle::new(PriceImpactParams::standard(), 4_000);
        let without = PriceImpactOracle::new(PriceImpactParams::without_interaction(), 4_000);
        assert!(with.value() > without.value());
        assert!(without.value() > 0.0);
    }

    #[test]
    fn optimal_value_matches_external_integration() {
        // Frozen against an independent integration of the same ODE system
        // (numpy RK4, 8000 steps).
        let oracle = PriceImpactOracle::new(PriceImpactParams::standard(), 8_000);
        assert!(
            (oracle.value() - 26.910466770273445).abs() < 1e-8,
            "value = {}",
            oracle.value()
        );
    }

    #[test]
    fn mean_inventory_sells_off_then_partially_buys_back() {
        // With a mild terminal penalty (c_g = 0.3) the optimal mean
        // trajectory is not monotone: sell down to an interior minimum near
        // t ~ 0.66, then buy back as the crowd's selling pressure fades.
        let oracle = PriceImpactOracle::new(PriceImpactParams::standard(), 4_000);
        let m0 = oracle.mean_state(0.0);
        assert!((m0 - 5.0).abs() < 1e-12);
        let mut prev = m0;
        for k in 1..=12 {
            let m = oracle.mean_state(k as f64 * 0.05);
            assert!(m < prev, "mean inventory must decrease early on");
            prev = m;
        }
        let m_end = oracle.mean_state(1.0);
        let m_mid = oracle.mean_state(0.65);
        assert!(m_end > m_mid, "buy-back after the interior minimum");
        assert!(m_end < m0, "net liquidation over the horizon");
        assert!(m_mid > 0.0);
    }

    #[test]
    fn hamiltonian_partials_are_consistent() {
        let problem = PriceImpactProblem::standard();
        let report =
            hamiltonian_partial_check::<f64>(&problem, 20, 1e-4, SeedSpec::new(41, 0, 0));
        assert!(report.within(1e-7), "{report:?}");
    }
}
