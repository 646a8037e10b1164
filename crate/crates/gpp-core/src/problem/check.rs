//! Self-check that a problem's hand-coded Hamiltonian derivatives match
//! central finite differences of `b . y + tr(sigma^T z) + f`.
//!
//! The Hamiltonian is assembled from the problem's own coefficient
//! functions, so the check catches sign slips and dropped terms in
//! `dx_hamiltonian` / `du_hamiltonian` without needing any external truth.

use crate::problem::{hamiltonian, ControlProblem, MeasureSummary, ZSample};
use crate::scalar::Scalar;
use crate::stochastics::SeedSpec;

/// Worst-case discrepancies found by [`hamiltonian_partial_check`].
///
/// Errors are scaled by `max(1, |exact|)`, so they read as absolute errors
/// near zero and relative errors for large derivatives.
#[derive(Debug, Clone, Copy)]
pub struct PartialCheckReport {
    /// Largest scaled error in the state gradient.
    pub max_dx_error: f64,
    /// Largest scaled error in the control gradient.
    pub max_du_error: f64,
    /// Number of random evaluation points used.
    pub points: usize,
}

impl PartialCheckReport {
    /// Whether both gradients agree with finite differences to `tol`.
    pub fn within(&self, tol: f64) -> bool {
        self.max_dx_error <= tol && self.max_du_error <= tol
    }
}

fn scaled_error(fd: f64, exact: f64) -> f64 {
    (fd - exact).abs() / exact.abs().max(1.0)
}

/// Compares `dx_hamiltonian` and `du_hamiltonian` against central finite
/// differences at `n_points` random evaluation points.
///
/// All arguments of `H` other than the differentiated one — including the
/// measure summary — are held fixed, matching the partial derivatives the
/// backward pass consumes. `eps` is the finite-difference step; `1e-5` is a
/// good choice for `f64`.
pub fn hamiltonian_partial_check<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    n_points: usize,
    eps: S,
    seed: SeedSpec,
) -> PartialCheckReport {
    let d = problem.dim_state();
    let m = problem.dim_noise();
    let d1 = problem.dim_control();

    let mut max_dx = 0.0f64;
    let mut max_du = 0.0f64;

    for k in 0..n_points {
        let mut rng = seed.child(k as u64).rng();
        let mut draw = |scale: f64| S::standard_normal(&mut rng) * S::c(scale);

        let mut x: Vec<S> = (0..d).map(|_| draw(0.4)).collect();
        let mut u: Vec<S> = (0..d1).map(|_| draw(0.4)).collect();
        let y: Vec<S> = (0..d).map(|_| draw(0.5)).collect();
        let z_y: Vec<S> = (0..d).map(|_| draw(0.5)).collect();
        let z_w: Vec<S> = (0..m).map(|_| draw(0.3)).collect();
        let mu = MeasureSummary {
            mean_state: (0..d).map(|_| draw(0.3)).collect(),
            mean_control: if problem.uses_mean_control() {
                (0..d1).map(|_| draw(0.3)).collect()
            } else {
                Vec::new()
            },
            custom: Vec::new(),
        };
        let t = problem.horizon() * S::c(0.37);
        let z = ZSample {
            y_next: &z_y,
            dw: &z_w,
            inv_dt: S::c(10.0),
        };

        let mut dx = vec![S::zero(); d];
        problem.dx_hamiltonian(t, &x, &mu, &y, z, &u, &mut dx);
        for i in 0..d {
            let base = x[i];
            x[i] = base + eps;
            let plus = hamiltonian(problem, t, &x, &mu, &y, z, &u);
            x[i] = base - eps;
            let minus = hamiltonian(problem, t, &x, &mu, &y, z, &u);
            x[i] = base;
            let fd = (plus - minus) / (S::c(2.0) * eps);
            max_dx = max_dx.max(scaled_error(fd.to_f64(), dx[i].to_f64()));
        }

        let mut du = vec![S::zero(); d1];
        problem.du_hamiltonian(t, &x, &mu, &y, z, &u, &mut du);
        for i in 0..d1 {
            let base = u[i];
            u[i] = base + eps;
            let plus = hamiltonian(problem, t, &x, &mu, &y, z, &u);
            u[i] = base - eps;
            let minus = hamiltonian(problem, t, &x, &mu, &y, z, &u);
            u[i] = base;
            let fd = (plus - minus) / (S::c(2.0) * eps);
            max_du = max_du.max(scaled_error(fd.to_f64(), du[i].to_f64()));
        }
    }

    PartialCheckReport {
        max_dx_error: max_dx,
        max_du_error: max_du,
        points: n_points,
    }
}
