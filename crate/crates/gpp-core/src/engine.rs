//! Particle engine: forward Euler–Maruyama simulation of a controlled
//! ensemble, the sample-wise backward adjoint recursion (with and without
//! mean-field interaction kernels), per-step cost and control-gradient
//! extraction, and a statistical probe that cross-checks the sample-wise
//! adjoint estimator against a nested conditional-expectation evaluation.
//!
//! Determinism contract: every particle derives its own random stream from
//! `seed.child(i)`, so draws never depend on scheduling; parallel loops only
//! write disjoint per-particle rows; every cross-particle reduction (means,
//! kernel averages) runs sequentially in particle order. Two runs with the
//! same seeds are bitwise identical regardless of thread count.

use ndarray::{s, Array1, Array3, ArrayView2, ArrayViewMut2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{
    measure_summary, ControlProblem, DonorSample, MeasureSummary, MuKernelKind, Policy, ZSample,
};
use crate::scalar::Scalar;
use crate::stochastics::{brownian_increments, purpose, BrownianIncrements, SeedSpec};

/// One simulated ensemble: states, applied controls, driving noise, and
/// (after a backward pass) the sample-wise adjoint values.
///
/// Arrays are time-major so each time slice is one contiguous
/// `(particles, dim)` block. The `Z` component of the adjoint pair is never
/// materialized: it is the rank-one product `Y_{n+1} (dW_n)^T / dt`, exposed
/// on demand through [`ParticleEnsemble::z_sample`].
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<S: Scalar> {
    /// States, shape `(steps + 1, particles, d)`.
    pub states: Array3<S>,
    /// Applied controls, shape `(steps, particles, d1)`.
    pub controls: Array3<S>,
    /// Brownian increments (shape `(particles, steps, m)` inside).
    pub increments: BrownianIncrements<S>,
    /// Adjoint values, shape `(steps + 1, particles, d)`; zero until a
    /// backward pass runs.
    pub adjoints: Array3<S>,
    /// Measure summaries per grid time (`steps + 1` entries; empty for
    /// problems without mean-field terms). The terminal entry has no
    /// control mean.
    pub mu_path: Vec<MeasureSummary<S>>,
    /// Time-step length.
    pub dt: S,
    /// Whether [`backward_adjoint`] (or a variant) has filled `adjoints`.
    pub has_adjoints: bool,
}

impl<S: Scalar> ParticleEnsemble<S> {
    /// Number of particles `M`.
    pub fn particles(&self) -> usize {
        self.states.shape()[1]
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.controls.shape()[0]
    }

    /// State dimension `d`.
    pub fn dim_state(&self) -> usize {
        self.states.shape()[2]
    }

    /// Grid time `t_n`.
    pub fn time(&self, n: usize) -> S {
        S::c(n as f64) * self.dt
    }

    /// States at grid time `n`, shape `(particles, d)`.
    pub fn states_at(&self, n: usize) -> ArrayView2<'_, S> {
        self.states.index_axis(Axis(0), n)
    }

    /// Controls applied on `[t_n, t_{n+1})`, shape `(particles, d1)`.
    pub fn controls_at(&self, n: usize) -> ArrayView2<'_, S> {
        self.controls.index_axis(Axis(0), n)
    }

    /// Adjoint values at grid time `n`, shape `(particles, d)`.
    pub fn adjoints_at(&self, n: usize) -> ArrayView2<'_, S> {
        self.adjoints.index_axis(Axis(0), n)
    }

    /// Brownian increments over `[t_n, t_{n+1})`, shape `(particles, m)`.
    pub fn increments_at(&self, n: usize) -> ArrayView2<'_, S> {
        self.increments.values.slice(s![.., n, ..])
    }

    /// Measure summary at grid time `n`.
    pub fn mu_at(&self, n: usize) -> &MeasureSummary<S> {
        &self.mu_path[n]
    }

    /// Particle `i`'s `Z` sample on `[t_n, t_{n+1})`.
    pub fn z_sample(&self, n: usize, i: usize) -> ZSample<'_, S> {
        ZSample {
            y_next: self
                .adjoints
                .slice(s![n + 1, i, ..])
                .to_slice()
                .expect("contiguous adjoint row"),
            dw: self
                .increments
                .values
                .slice(s![i, n, ..])
                .to_slice()
                .expect("contiguous increment row"),
            inv_dt: S::one() / self.dt,
        }
    }
}

fn check_finite<S: Scalar>(
    block: ArrayView2<S>,
    quantity: &'static str,
    step: usize,
) -> Result<()> {
    if block.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        // The epoch slot is stamped by the solver via `Error::at_epoch`.
        Err(Error::NonFinite {
            quantity,
            epoch: 0,
            step,
        })
    }
}

/// Simulates `particles` Euler–Maruyama paths under the given feedback
/// policy.
///
/// For mean-field problems the step-`n` measure summary is computed from the
/// current ensemble before stepping: first the state means (which the policy
/// may read), then — once the step's controls exist — the control means and
/// any problem-declared custom summaries. Initial states come from
/// `initial_seed.child(i)`, increments from `brownian_seed.child(i)`.
pub fn simulate_forward<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    policy: &dyn Policy<S>,
    particles: usize,
    steps: usize,
    initial_seed: SeedSpec,
    brownian_seed: SeedSpec,
) -> Result<ParticleEnsemble<S>> {
    let d = problem.dim_state();
    let m = problem.dim_noise();
    let d1 = problem.dim_control();
    if policy.dim_control() != d1 {
        return Err(Error::Config(format!(
            "policy emits {} control components, problem `{}` expects {}",
            policy.dim_control(),
            problem.name(),
            d1
        )));
    }
    let horizon = problem.horizon();
    let dt = horizon / S::c(steps as f64);
    let increments = brownian_increments(brownian_seed, particles, steps, m, dt)?;

    let mut states = Array3::zeros((steps + 1, particles, d));
    let mut controls = Array3::zeros((steps, particles, d1));
    let mut mu_path: Vec<MeasureSummary<S>> = Vec::with_capacity(steps + 1);

    states
        .index_axis_mut(Axis(0), 0)
        .outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let mut rng = initial_seed.child(i as u64).rng();
            problem.sample_initial(&mut rng, row.as_slice_mut().expect("contiguous state row"));
        });
    check_finite(states.index_axis(Axis(0), 0), "initial state", 0)?;

    let mean_field = problem.is_mean_field();
    for n in 0..steps {
        let t = S::c(n as f64) * dt;
        let (head, mut tail) = states.view_mut().split_at(Axis(0), n + 1);
        let cur = head.index_axis(Axis(0), n);
        let next = tail.index_axis_mut(Axis(0), 0);
        let mut u_n = controls.index_axis_mut(Axis(0), n);

        let state_mu = if mean_field {
            measure_summary(cur, None)
        } else {
            MeasureSummary::empty()
        };
        policy.eval_batch(n, t, cur, &state_mu, u_n.view_mut());
        check_finite(u_n.view(), "control", n)?;

        let mu = if mean_field {
            let mut full = measure_summary(cur, Some(u_n.view()));
            full.custom = problem.custom_summaries(cur, Some(u_n.view()));
            full
        } else {
            MeasureSummary::empty()
        };

        let dw_n = increments.values.slice(s![.., n, ..]);
        let mut next = next;
        Zip::from(next.rows_mut())
            .and(cur.rows())
            .and(u_n.rows())
            .and(dw_n.rows())
            .par_for_each(|next_row, x_row, u_row, w_row| {
                let x = x_row.to_slice().expect("contiguous state row");
                let u = u_row.to_slice().expect("contiguous control row");
                let w = w_row.to_slice().expect("contiguous increment row");
                let mut b = vec![S::zero(); d];
                problem.drift(t, x, &mu, u, &mut b);
                let mut sigma = vec![S::zero(); d * m];
                problem.diffusion(t, x, &mu, u, &mut sigma);
                let next_row = next_row.into_slice().expect("contiguous state row");
                for k in 0..d {
                    let mut v = x[k] + b[k] * dt;
                    let srow = &sigma[k * m..(k + 1) * m];
                    for (j, &wj) in w.iter().enumerate() {
                        v += srow[j] * wj;
                    }
                    next_row[k] = v;
                }
            });
        mu_path.push(mu);
        check_finite(tail.index_axis(Axis(0), 0), "state", n + 1)?;
    }

    // Terminal summary (no controls exist at the terminal time).
    let terminal = if mean_field {
        let x_term = states.index_axis(Axis(0), steps);
        let mut s = measure_summary(x_term, None);
        s.custom = problem.custom_summaries(x_term, None);
        s
    } else {
        MeasureSummary::empty()
    };
    mu_path.push(terminal);

    Ok(ParticleEnsemble {
        adjoints: Array3::zeros((steps + 1, particles, d)),
        states,
        controls,
        increments,
        mu_path,
        dt,
        has_adjoints: false,
    })
}

/// Ensemble average of the terminal-cost measure kernel,
/// `(1/M) sum_j dmu_g(X_j, mu)` — the state-constant fast path.
///
/// Summation runs in fixed particle order so results do not depend on the
/// parallel schedule.
pub(crate) fn kernel_mean_g<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    terminal_states: ArrayView2<S>,
    mu: &MeasureSummary<S>,
) -> Vec<S> {
    let d = terminal_states.ncols();
    let mut acc = vec![S::zero(); d];
    let mut tmp = vec![S::zero(); d];
    for xj in terminal_states.rows() {
        problem.dmu_g_kernel(xj.to_slice().expect("contiguous row"), mu, &[], &mut tmp);
        for (a, &v) in acc.iter_mut().zip(tmp.iter()) {
            *a += v;
        }
    }
    let inv = S::one() / S::c(terminal_states.nrows() as f64);
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// Ensemble average of the Hamiltonian measure kernel at one time step,
/// `(1/M) sum_j dmu_H(t, donor_j, mu)` — the state-constant fast path.
#[allow(clippy::too_many_arguments)]
pub(crate) fn kernel_mean_h<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    t: S,
    states: ArrayView2<S>,
    y_next: ArrayView2<S>,
    dw: ArrayView2<S>,
    controls: ArrayView2<S>,
    mu: &MeasureSummary<S>,
    inv_dt: S,
) -> Vec<S> {
    let d = states.ncols();
    let mut acc = vec![S::zero(); d];
    let mut tmp = vec![S::zero(); d];
    for j in 0..states.nrows() {
        let yj = y_next.row(j);
        let wj = dw.row(j);
        let donor = DonorSample {
            x: states.row(j).to_slice().expect("contiguous row"),
            y_next: yj.to_slice().expect("contiguous row"),
            z: ZSample {
                y_next: yj.to_slice().expect("contiguous row"),
                dw: wj.to_slice().expect("contiguous row"),
                inv_dt,
            },
            u: controls.row(j).to_slice().expect("contiguous row"),
        };
        problem.dmu_h_kernel(t, donor, mu, &[], &mut tmp);
        for (a, &v) in acc.iter_mut().zip(tmp.iter()) {
            *a += v;
        }
    }
    let inv = S::one() / S::c(states.nrows() as f64);
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// Backward adjoint recursion without mean-field kernels:
/// `Y_N = grad_g(X_N)`, then
/// `Y_n = Y_{n+1} + dxH(t_n, X_n, Y_{n+1}, Z_n, u_n) dt` with the rank-one
/// `Z_n = Y_{n+1} (dW_n)^T / dt`.
pub fn backward_adjoint_socp<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ensemble: &mut ParticleEnsemble<S>,
) -> Result<()> {
    backward_impl(problem, ensemble, false)
}

/// Backward adjoint recursion with the empirical mean-field kernel terms:
/// the terminal condition gains `(1/M) sum_j dmu_g(X_j)(X_i)` and each step
/// gains `(1/M) sum_j dmu_H(t_n, donor_j)(X_i) dt`.
pub fn backward_adjoint_mfc<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ensemble: &mut ParticleEnsemble<S>,
) -> Result<()> {
    backward_impl(problem, ensemble, true)
}

/// Dispatches on [`ControlProblem::is_mean_field`].
pub fn backward_adjoint<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ensemble: &mut ParticleEnsemble<S>,
) -> Result<()> {
    backward_impl(problem, ensemble, problem.is_mean_field())
}

fn backward_impl<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ens: &mut ParticleEnsemble<S>,
    mean_field: bool,
) -> Result<()> {
    let steps = ens.steps();
    let d = problem.dim_state();
    if ens.dim_state() != d {
        return Err(Error::Config(format!(
            "ensemble state dimension {} does not match problem `{}` ({})",
            ens.dim_state(),
            problem.name(),
            d
        )));
    }
    let dt = ens.dt;
    let inv_dt = S::one() / dt;

    // Terminal condition.
    let mu_term = &ens.mu_path[steps];
    let g_kind = if mean_field {
        problem.dmu_g_kind()
    } else {
        MuKernelKind::None
    };
    {
        let x_term = ens.states.index_axis(Axis(0), steps);
        let mut y_term = ens.adjoints.index_axis_mut(Axis(0), steps);
        Zip::from(y_term.rows_mut())
            .and(x_term.rows())
            .par_for_each(|y_row, x_row| {
                let out = y_row.into_slice().expect("contiguous adjoint row");
                problem.grad_terminal(x_row.to_slice().expect("contiguous row"), mu_term, out);
            });
        match g_kind {
            MuKernelKind::None => {}
            MuKernelKind::ConstantInState => {
                let mean = kernel_mean_g(problem, x_term, mu_term);
                y_term.rows_mut().into_iter().par_bridge().for_each(|row| {
                    let row = row.into_slice().expect("contiguous adjoint row");
                    for (v, &k) in row.iter_mut().zip(mean.iter()) {
                        *v += k;
                    }
                });
            }
            MuKernelKind::General => {
                let m_count = S::c(x_term.nrows() as f64);
                Zip::from(y_term.rows_mut())
                    .and(x_term.rows())
                    .par_for_each(|y_row, x_row| {
                        let x_at = x_row.to_slice().expect("contiguous row");
                        let out = y_row.into_slice().expect("contiguous adjoint row");
                        let mut tmp = vec![S::zero(); d];
                        for xj in x_term.rows() {
                            problem.dmu_g_kernel(
                                xj.to_slice().expect("contiguous row"),
                                mu_term,
                                x_at,
                                &mut tmp,
                            );
                            for (v, &k) in out.iter_mut().zip(tmp.iter()) {
                                *v += k / m_count;
                            }
                        }
                    });
            }
        }
    }
    check_finite(
        ens.adjoints.index_axis(Axis(0), steps),
        "terminal adjoint",
        steps,
    )?;

    let h_kind = if mean_field {
        problem.dmu_h_kind()
    } else {
        MuKernelKind::None
    };
    for n in (0..steps).rev() {
        let t = ens.time(n);
        let mu = &ens.mu_path[n];
        let x_n = ens.states.index_axis(Axis(0), n);
        let u_n = ens.controls.index_axis(Axis(0), n);
        let dw_n = ens.increments.values.slice(s![.., n, ..]);
        let (mut head, tail) = ens.adjoints.view_mut().split_at(Axis(0), n + 1);
        let mut y_n = head.index_axis_mut(Axis(0), n);
        let y_next = tail.index_axis(Axis(0), 0);

        let const_kernel = match h_kind {
            MuKernelKind::ConstantInState => Some(kernel_mean_h(
                problem,
                t,
                x_n,
                y_next.view(),
                dw_n,
                u_n,
                mu,
                inv_dt,
            )),
            _ => None,
        };
        let m_count = S::c(x_n.nrows() as f64);

        Zip::from(y_n.rows_mut())
            .and(x_n.rows())
            .and(y_next.rows())
            .and(dw_n.rows())
            .and(u_n.rows())
            .par_for_each(|y_row, x_row, ynext_row, w_row, u_row| {
                let x = x_row.to_slice().expect("contiguous row");
                let ynext = ynext_row.to_slice().expect("contiguous row");
                let w = w_row.to_slice().expect("contiguous row");
                let u = u_row.to_slice().expect("contiguous row");
                let z = ZSample {
                    y_next: ynext,
                    dw: w,
                    inv_dt,
                };
                let mut dx = vec![S::zero(); d];
                problem.dx_hamiltonian(t, x, mu, ynext, z, u, &mut dx);
                let out = y_row.into_slice().expect("contiguous adjoint row");
                for k in 0..d {
                    out[k] = ynext[k] + dx[k] * dt;
                }
                if let Some(kern) = &const_kernel {
                    for (v, &k) in out.iter_mut().zip(kern.iter()) {
                        *v += k * dt;
                    }
                } else if h_kind == MuKernelKind::General {
                    let mut tmp = vec![S::zero(); d];
                    let mut acc = vec![S::zero(); d];
                    for j in 0..x_n.nrows() {
                        let yj = y_next.row(j).to_slice().expect("contiguous row");
                        let wj = dw_n.row(j).to_slice().expect("contiguous row");
                        let donor = DonorSample {
                            x: x_n.row(j).to_slice().expect("contiguous row"),
                            y_next: yj,
                            z: ZSample {
                                y_next: yj,
                                dw: wj,
                                inv_dt,
                            },
                            u: u_n.row(j).to_slice().expect("contiguous row"),
                        };
                        problem.dmu_h_kernel(t, donor, mu, x, &mut tmp);
                        for (a, &v) in acc.iter_mut().zip(tmp.iter()) {
                            *a += v;
                        }
                    }
                    for (v, a) in out.iter_mut().zip(acc.iter()) {
                        *v += *a / m_count * dt;
                    }
                }
            });
        check_finite(head.index_axis(Axis(0), n), "adjoint", n)?;
    }
    ens.has_adjoints = true;
    Ok(())
}

/// Per-particle total cost
/// `sum_n f(t_n, X_n, mu_n, u_n) dt + g(X_N, mu_N)`.
pub fn path_costs<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ens: &ParticleEnsemble<S>,
) -> Array1<S> {
    let steps = ens.steps();
    let dt = ens.dt;
    let mut costs = Array1::zeros(ens.particles());
    for n in 0..steps {
        let t = ens.time(n);
        let mu = &ens.mu_path[n];
        Zip::from(costs.view_mut())
            .and(ens.states_at(n).rows())
            .and(ens.controls_at(n).rows())
            .par_for_each(|c, x_row, u_row| {
                *c += problem.running_cost(
                    t,
                    x_row.to_slice().expect("contiguous row"),
                    mu,
                    u_row.to_slice().expect("contiguous row"),
                ) * dt;
            });
    }
    let mu_term = &ens.mu_path[steps];
    Zip::from(costs.view_mut())
        .and(ens.states_at(steps).rows())
        .par_for_each(|c, x_row| {
            *c += problem.terminal_cost(x_row.to_slice().expect("contiguous row"), mu_term);
        });
    costs
}

/// Sample mean and standard error of a vector of per-particle values.
pub fn mean_and_se<S: Scalar>(values: &Array1<S>) -> (S, S) {
    let n = values.len();
    let nf = S::c(n as f64);
    let mean = values.iter().copied().sum::<S>() / nf;
    if n < 2 {
        return (mean, S::zero());
    }
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<S>()
        / S::c((n - 1) as f64);
    (mean, (var / nf).sqrt())
}

/// Which adjoint value the control gradient reads.
///
/// The gradient `duH` nominally depends on `Y_{t_n}`; the sample-wise scheme
/// can evaluate it either with the same-step estimate `Y_n` or with the
/// next-step value `Y_{n+1}` (the default, which decorrelates the gradient
/// from the step's own increment).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YIndex {
    /// Use `Y_n`.
    Current,
    /// Use `Y_{n+1}` (default).
    #[default]
    Next,
}

/// Evaluates the per-particle control gradient
/// `duH(t_n, X_n, mu_n, Y, Z_n, u_n) [+ mean control-law term]` at step `n`,
/// writing one row per particle into `out` (`(particles, d1)`).
///
/// Requires a completed backward pass.
pub fn control_gradient_at<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    ens: &ParticleEnsemble<S>,
    n: usize,
    y_index: YIndex,
    mut out: ArrayViewMut2<S>,
) -> Result<()> {
    if !ens.has_adjoints {
        return Err(Error::Config(
            "control gradient requested before the backward adjoint pass".into(),
        ));
    }
    let t = ens.time(n);
    let mu = &ens.mu_path[n];
    let inv_dt = S::one() / ens.dt;
    let extra = problem.dnu_gradient_mean(t, mu);
    Zip::from(out.rows_mut())
        .and(ens.states_at(n).rows())
        .and(ens.adjoints_at(n).rows())
        .and(ens.adjoints_at(n + 1).rows())
        .and(ens.increments_at(n).rows())
        .and(ens.controls_at(n).rows())
        .par_for_each(|g_row, x_row, ycur_row, ynext_row, w_row, u_row| {
            let ynext = ynext_row.to_slice().expect("contiguous row");
            let y_arg = match y_index {
                YIndex::Current => ycur_row.to_slice().expect("contiguous row"),
                YIndex::Next => ynext,
            };
            let z = ZSample {
                y_next: ynext,
                dw: w_row.to_slice().expect("contiguous row"),
                inv_dt,
            };
            let out_row = g_row.into_slice().expect("contiguous gradient row");
            problem.du_hamiltonian(
                t,
                x_row.to_slice().expect("contiguous row"),
                mu,
                y_arg,
                z,
                u_row.to_slice().expect("contiguous row"),
                out_row,
            );
            if let Some(e) = &extra {
                for (v, &k) in out_row.iter_mut().zip(e.iter()) {
                    *v += k;
                }
            }
        });
    Ok(())
}

// ---------------------------------------------------------------------------
// Unbiasedness probe
// ---------------------------------------------------------------------------

/// Sizing knobs for [`unbiasedness_probe`].
#[derive(Debug, Clone, Copy)]
pub struct ProbeSettings {
    /// Particles in the sample-wise route.
    pub n_outer: usize,
    /// Branches per node in the nested conditional-expectation route.
    pub n_inner: usize,
    /// Independent root replications of the nested route.
    pub replications: usize,
    /// Ensemble size used to freeze the measure path of mean-field problems.
    pub reference_particles: usize,
    /// Corrupts the sample-wise route by dropping its `dxH` term; the probe
    /// must then report a significant gap (negative control).
    pub negative_control: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            n_outer: 200_000,
            n_inner: 32,
            replications: 2_000,
            reference_particles: 50_000,
            negative_control: false,
        }
    }
}

/// Outcome of the probe: the two independent estimates of `E[Y_0]` with
/// their standard errors.
#[derive(Debug, Clone, Copy)]
pub struct ProbeReport {
    /// Mean of the sample-wise adjoint over the outer ensemble.
    pub sample_mean: f64,
    /// Standard error of `sample_mean`.
    pub sample_se: f64,
    /// Nested conditional-expectation estimate.
    pub nested_mean: f64,
    /// Standard error of `nested_mean`.
    pub nested_se: f64,
}

impl ProbeReport {
    /// Difference between the two routes.
    pub fn gap(&self) -> f64 {
        self.sample_mean - self.nested_mean
    }

    /// Standard error of the gap (the routes are independent).
    pub fn combined_se(&self) -> f64 {
        self.sample_se.hypot(self.nested_se)
    }

    /// Gap in units of its standard error (0 when both are exactly zero).
    pub fn gap_sigmas(&self) -> f64 {
        let se = self.combined_se();
        if se == 0.0 {
            if self.gap() == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.gap().abs() / se
        }
    }

    /// Whether the gap is within `k` combined standard errors (with a tiny
    /// absolute floor so exactly-deterministic cases pass).
    pub fn passes(&self, k: f64) -> bool {
        self.gap().abs() <= k * self.combined_se() + 1e-10
    }
}

/// Frozen-measure view of a problem: coefficients read a fixed summary path
/// instead of the live ensemble, and the backward data gains precomputed
/// kernel means. This turns a mean-field problem into a plain (decoupled)
/// control problem whose sample-wise adjoint the nested route can verify.
struct FrozenMeasure<'a, S: Scalar> {
    inner: &'a dyn ControlProblem<S>,
    mu_path: &'a [MeasureSummary<S>],
    h_kernel_mean: &'a [Vec<S>],
    g_kernel_mean: &'a [S],
    dt: S,
    drop_dx: bool,
}

impl<'a, S: Scalar> FrozenMeasure<'a, S> {
    fn step_of(&self, t: S) -> usize {
        let idx = (t / self.dt).to_f64().round();
        (idx as usize).min(self.mu_path.len() - 1)
    }

    fn mu_of(&self, t: S) -> &MeasureSummary<S> {
        &self.mu_path[self.step_of(t)]
    }
}

impl<'a, S: Scalar> ControlProblem<S> for FrozenMeasure<'a, S> {
    fn name(&self) -> &str {
        "frozen-measure"
    }
    fn dim_state(&self) -> usize {
        self.inner.dim_state()
    }
    fn dim_noise(&self) -> usize {
        self.inner.dim_noise()
    }
    fn dim_control(&self) -> usize {
        self.inner.dim_control()
    }
    fn horizon(&self) -> S {
        self.inner.horizon()
    }
    fn input_map(&self) -> crate::problem::InputMap {
        self.inner.input_map()
    }
    fn sample_initial(&self, rng: &mut rand_chacha::ChaCha8Rng, out: &mut [S]) {
        self.inner.sample_initial(rng, out);
    }
    fn drift(&self, t: S, x: &[S], _mu: &MeasureSummary<S>, u: &[S], out: &mut [S]) {
        self.inner.drift(t, x, self.mu_of(t), u, out);
    }
    fn diffusion(&self, t: S, x: &[S], _mu: &MeasureSummary<S>, u: &[S], out: &mut [S]) {
        self.inner.diffusion(t, x, self.mu_of(t), u, out);
    }
    fn running_cost(&self, t: S, x: &[S], _mu: &MeasureSummary<S>, u: &[S]) -> S {
        self.inner.running_cost(t, x, self.mu_of(t), u)
    }
    fn terminal_cost(&self, x: &[S], _mu: &MeasureSummary<S>) -> S {
        self.inner
            .terminal_cost(x, self.mu_path.last().expect("non-empty measure path"))
    }
    fn grad_terminal(&self, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        self.inner
            .grad_terminal(x, self.mu_path.last().expect("non-empty measure path"), out);
        for (v, &k) in out.iter_mut().zip(self.g_kernel_mean.iter()) {
            *v += k;
        }
    }
    fn dx_hamiltonian(
        &self,
        t: S,
        x: &[S],
        _mu: &MeasureSummary<S>,
        y: &[S],
        z: ZSample<'_, S>,
        u: &[S],
        out: &mut [S],
    ) {
        if self.drop_dx {
            out.iter_mut().for_each(|v| *v = S::zero());
            return;
        }
        self.inner.dx_hamiltonian(t, x, self.mu_of(t), y, z, u, out);
        let kern = &self.h_kernel_mean[self.step_of(t).min(self.h_kernel_mean.len() - 1)];
        for (v, &k) in out.iter_mut().zip(kern.iter()) {
            *v += k;
        }
    }
    fn du_hamiltonian(
        &self,
        t: S,
        x: &[S],
        _mu: &MeasureSummary<S>,
        y: &[S],
        z: ZSample<'_, S>,
        u: &[S],
        out: &mut [S],
    ) {
        self.inner.du_hamiltonian(t, x, self.mu_of(t), y, z, u, out);
    }
}

/// Nested conditional-expectation estimate of `Y_{t_n}(x)` for the frozen
/// problem: at each node, `n_inner` branches estimate `E[Y_{n+1}]` and
/// `Z_n = E[Y_{n+1} dW]/dt`, and the node value is
/// `E[Y_{n+1}] + dxH(..., E[Y_{n+1}], Z_n, u_n) dt`. Because the recursion
/// is linear in `(Y, Z)`, the estimate is unbiased for any branch count.
fn nested_estimate<S: Scalar>(
    frozen: &FrozenMeasure<'_, S>,
    policy: &dyn Policy<S>,
    n: usize,
    steps: usize,
    x: S,
    n_inner: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> S {
    let empty = MeasureSummary::empty();
    if n == steps {
        let mut g = [S::zero()];
        frozen.grad_terminal(&[x], &empty, &mut g);
        return g[0];
    }
    let dt = frozen.dt;
    let t = S::c(n as f64) * dt;
    let mut u = [S::zero()];
    policy.eval_one(n, t, &[x], &empty, &mut u);
    let mut b = [S::zero()];
    frozen.drift(t, &[x], &empty, &u, &mut b);
    let mut sigma = [S::zero()];
    frozen.diffusion(t, &[x], &empty, &u, &mut sigma);
    let sqrt_dt = dt.sqrt();

    let mut sum_y = S::zero();
    let mut sum_yw = S::zero();
    for _ in 0..n_inner {
        let w = sqrt_dt * S::standard_normal(rng);
        let x_next = x + b[0] * dt + sigma[0] * w;
        let y = nested_estimate(frozen, policy, n + 1, steps, x_next, n_inner, rng);
        sum_y += y;
        sum_yw += y * w;
    }
    let inv = S::one() / S::c(n_inner as f64);
    let e_y = sum_y * inv;
    let z_val = sum_yw * inv / dt;
    let z_one = [z_val];
    let w_one = [S::one()];
    let z = ZSample {
        y_next: &z_one,
        dw: &w_one,
        inv_dt: S::one(),
    };
    let mut dx = [S::zero()];
    frozen.dx_hamiltonian(t, &[x], &empty, &[e_y], z, &u, &mut dx);
    e_y + dx[0] * dt
}

/// Estimates `E[Y_0]` two independent ways — (a) the production sample-wise
/// backward pass over `n_outer` particles, (b) a nested Monte-Carlo
/// evaluation of the conditional-expectation scheme — and reports both with
/// standard errors. Both routes hold the measure path (and, for mean-field
/// problems, the empirical kernel means from a large reference ensemble)
/// fixed, so they target the same decoupled quantity.
///
/// Restricted to scalar problems (`d = m = 1`) with short horizons; the
/// nested route costs `replications * n_inner^steps`. The policy must not
/// read the measure argument (learned policies never do).
pub fn unbiasedness_probe<S: Scalar>(
    problem: &dyn ControlProblem<S>,
    policy: &dyn Policy<S>,
    steps: usize,
    settings: ProbeSettings,
    master_seed: u64,
) -> Result<ProbeReport> {
    if problem.dim_state() != 1 || problem.dim_noise() != 1 || problem.dim_control() != 1 {
        return Err(Error::Config(format!(
            "unbiasedness probe requires a scalar problem; `{}` has d={}, m={}, d1={}",
            problem.name(),
            problem.dim_state(),
            problem.dim_noise(),
            problem.dim_control()
        )));
    }
    if steps == 0 || steps > 6 {
        return Err(Error::invalid(
            "steps",
            format!("probe supports 1..=6 time steps, got {steps}"),
        ));
    }
    if matches!(problem.dmu_h_kind(), MuKernelKind::General)
        || matches!(problem.dmu_g_kind(), MuKernelKind::General)
    {
        return Err(Error::Config(
            "unbiasedness probe requires state-constant interaction kernels".into(),
        ));
    }
    let dt = problem.horizon() / S::c(steps as f64);
    let inv_dt = S::one() / dt;

    // Freeze the measure path and kernel means from a reference ensemble.
    let (mu_path, h_means, g_mean) = if problem.is_mean_field() {
        let mut reference = simulate_forward(
            problem,
            policy,
            settings.reference_particles,
            steps,
            SeedSpec::new(master_seed, purpose::PROBE_PARTICLE, 0),
            SeedSpec::new(master_seed, purpose::PROBE_PARTICLE, 1),
        )?;
        backward_adjoint_mfc(problem, &mut reference)?;
        let h_means: Vec<Vec<S>> = (0..steps)
            .map(|n| {
                if problem.dmu_h_kind() == MuKernelKind::ConstantInState {
                    kernel_mean_h(
                        problem,
                        reference.time(n),
                        reference.states_at(n),
                        reference.adjoints_at(n + 1),
                        reference.increments_at(n),
                        reference.controls_at(n),
                        reference.mu_at(n),
                        inv_dt,
                    )
                } else {
                    vec![S::zero(); 1]
                }
            })
            .collect();
        let g_mean = if problem.dmu_g_kind() == MuKernelKind::ConstantInState {
            kernel_mean_g(problem, reference.states_at(steps), reference.mu_at(steps))
        } else {
            vec![S::zero(); 1]
        };
        (reference.mu_path.clone(), h_means, g_mean)
    } else {
        (
            vec![MeasureSummary::empty(); steps + 1],
            vec![vec![S::zero(); 1]; steps],
            vec![S::zero(); 1],
        )
    };

    // Route (a): the production forward + backward pass on the frozen
    // problem (optionally corrupted for the negative control).
    let frozen_a = FrozenMeasure {
        inner: problem,
        mu_path: &mu_path,
        h_kernel_mean: &h_means,
        g_kernel_mean: &g_mean,
        dt,
        drop_dx: settings.negative_control,
    };
    let mut ens = simulate_forward(
        &frozen_a,
        policy,
        settings.n_outer,
        steps,
        SeedSpec::new(master_seed, purpose::PROBE_PARTICLE, 2),
        SeedSpec::new(master_seed, purpose::PROBE_PARTICLE, 3),
    )?;
    backward_adjoint_socp(&frozen_a, &mut ens)?;
    let y0: Array1<f64> = ens
        .adjoints_at(0)
        .column(0)
        .iter()
        .map(|&v| v.to_f64())
        .collect();
    let (a_mean, a_se) = mean_and_se(&y0);

    // Route (b): nested conditional-expectation evaluation (never corrupted).
    let frozen_b = FrozenMeasure {
        drop_dx: false,
        ..frozen_a
    };
    let roots: Vec<f64> = (0..settings.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = SeedSpec::new(master_seed, purpose::PROBE_NESTED, r as u64).rng();
            let mut x0 = [S::zero()];
            problem.sample_initial(&mut rng, &mut x0);
            nested_estimate(
                &frozen_b,
                policy,
                0,
                steps,
                x0[0],
                settings.n_inner,
                &mut rng,
            )
            .to_f64()
        })
        .collect();
    let roots = Array1::from_vec(roots);
    let (b_mean, b_se) = mean_and_se(&roots);

    Ok(ProbeReport {
        sample_mean: a_mean,
        sample_se: a_se,
        nested_mean: b_mean,
        nested_se: b_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::interbank::{InterbankParams, InterbankProblem};
    use crate::benchmarks::law::InitialLaw;
    use crate::benchmarks::lq::{riccati_p, LqParams, LqProblem};
    use crate::problem::FeedbackPolicy;
    use crate::problem::ZeroPolicy;
    use rand_chacha::ChaCha8Rng;

    /// dX = c_drift dt + c_diff X dW, cost f = 0, g = g_lin . x.
    struct Toy1d {
        c_drift: f64,
        c_diff_x: f64,
        g_lin: f64,
        x0: f64,
    }

    impl ControlProblem<f64> for Toy1d {
        fn name(&self) -> &str {
            "toy1d"
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
        fn horizon(&self) -> f64 {
            1.0
        }
        fn sample_initial(&self, _rng: &mut ChaCha8Rng, out: &mut [f64]) {
            out[0] = self.x0;
        }
        fn drift(&self, _t: f64, _x: &[f64], _mu: &MeasureSummary<f64>, _u: &[f64], out: &mut [f64]) {
            out[0] = self.c_drift;
        }
        fn diffusion(
            &self,
            _t: f64,
            x: &[f64],
            _mu: &MeasureSummary<f64>,
            _u: &[f64],
            out: &mut [f64],
        ) {
            out[0] = self.c_diff_x * x[0];
        }
        fn running_cost(&self, _t: f64, _x: &[f64], _mu: &MeasureSummary<f64>, _u: &[f64]) -> f64 {
            0.0
        }
        fn terminal_cost(&self, x: &[f64], _mu: &MeasureSummary<f64>) -> f64 {
            self.g_lin * x[0]
        }
        fn grad_terminal(&self, _x: &[f64], _mu: &MeasureSummary<f64>, out: &mut [f64]) {
            out[0] = self.g_lin;
        }
        fn dx_hamiltonian(
            &self,
            _t: f64,
            _x: &[f64],
            _mu: &MeasureSummary<f64>,
            y: &[f64],
            z: ZSample<'_, f64>,
            _u: &[f64],
            out: &mut [f64],
        ) {
            // H = c_drift y + c_diff x z + 0 => dxH = c_diff * z.
            let _ = y;
            out[0] = self.c_diff_x * z.scalar();
        }
        fn du_hamiltonian(
            &self,
            _t: f64,
            _x: &[f64],
            _mu: &MeasureSummary<f64>,
            _y: &[f64],
            _z: ZSample<'_, f64>,
            _u: &[f64],
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
    }

    fn seeds(tag: u64) -> (SeedSpec, SeedSpec) {
        (
            SeedSpec::new(tag, purpose::TRAIN_INITIAL, 0),
            SeedSpec::new(tag, purpose::TRAIN_BROWNIAN, 0),
        )
    }

    #[test]
    fn zero_coefficients_keep_the_state_constant() {
        let p = Toy1d {
            c_drift: 0.0,
            c_diff_x: 0.0,
            g_lin: 1.0,
            x0: 0.7,
        };
        let (si, sb) = seeds(1);
        let ens = simulate_forward(&p, &ZeroPolicy::new(1), 16, 8, si, sb).unwrap();
        for n in 0..=8 {
            for i in 0..16 {
                assert_eq!(ens.states[[n, i, 0]], 0.7);
            }
        }
    }

    #[test]
    fn constant_drift_integrates_exactly() {
        // dt = 1/8 is exactly representable, so repeated addition is exact.
        let p = Toy1d {
            c_drift: 1.0,
            c_diff_x: 0.0,
            g_lin: 1.0,
            x0: 0.5,
        };
        let (si, sb) = seeds(2);
        let ens = simulate_forward(&p, &ZeroPolicy::new(1), 4, 8, si, sb).unwrap();
        for i in 0..4 {
            assert_eq!(ens.states[[8, i, 0]], 1.5);
        }
    }

    #[test]
    fn multiplicative_noise_preserves_the_mean() {
        // dX = X dW is a martingale: E[X_T] = X_0 = 1.
        let p = Toy1d {
            c_drift: 0.0,
            c_diff_x: 1.0,
            g_lin: 0.0,
            x0: 1.0,
        };
        let (si, sb) = seeds(3);
        let ens = simulate_forward(&p, &ZeroPolicy::new(1), 100_000, 50, si, sb).unwrap();
        let xt: Array1<f64> = ens.states_at(50).column(0).to_owned();
        let (mean, se) = mean_and_se(&xt);
        assert!(
            (mean - 1.0).abs() < 3.0 * se,
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn linear_terminal_cost_gives_constant_adjoint_and_centered_z() {
        // g = c x and dxH = 0 => Y = c everywhere; Z = c dW/dt averages to 0.
        let p = Toy1d {
            c_drift: 0.3,
            c_diff_x: 0.0,
            g_lin: 2.5,
            x0: 0.0,
        };
        let (si, sb) = seeds(4);
        let mut ens = simulate_forward(&p, &ZeroPolicy::new(1), 50_000, 10, si, sb).unwrap();
        backward_adjoint_socp(&p, &mut ens).unwrap();
        for n in 0..=10 {
            for i in 0..50 {
                assert_eq!(ens.adjoints[[n, i, 0]], 2.5);
            }
        }
        let z_vals: Array1<f64> = (0..50_000)
            .map(|i| ens.z_sample(3, i).scalar())
            .collect();
        let (z_mean, z_se) = mean_and_se(&z_vals);
        assert!(z_mean.abs() < 3.0 * z_se, "z mean {z_mean}, se {z_se}");
    }

    #[test]
    fn one_step_recursion_matches_hand_computation() {
        let p = Toy1d {
            c_drift: 0.2,
            c_diff_x: 0.7,
            g_lin: 1.4,
            x0: 0.9,
        };
        let (si, sb) = seeds(5);
        let mut ens = simulate_forward(&p, &ZeroPolicy::new(1), 3, 1, si, sb).unwrap();
        backward_adjoint_socp(&p, &mut ens).unwrap();
        let dt = 1.0;
        for i in 0..3 {
            let dw = ens.increments.values[[i, 0, 0]];
            // Y_1 = g' = 1.4; Z_0 = Y_1 dW / dt; Y_0 = Y_1 + c_diff Z_0 dt.
            let z0 = 1.4 * dw / dt;
            let expected = 1.4 + 0.7 * z0 * dt;
            assert!(
                (ens.adjoints[[0, i, 0]] - expected).abs() < 1e-12,
                "particle {i}"
            );
        }
    }

    #[test]
    fn lq_adjoint_mean_matches_riccati_gradient() {
        // Under the optimal feedback, Y_t = p(t) X_t, so E[Y_0] = p(0) x_0.
        let problem = LqProblem::probe_1d(1.0);
        let params = LqParams::standard();
        let oracle = FeedbackPolicy::new(1, move |t: f64, x: &[f64], _mu: &MeasureSummary<f64>, out: &mut [f64]| {
            out[0] = -(params.b / params.r) * riccati_p(&params, t) * x[0];
        });
        let (si, sb) = seeds(6);
        let mut ens = simulate_forward(&problem, &oracle, 100_000, 400, si, sb).unwrap();
        backward_adjoint_socp(&problem, &mut ens).unwrap();
        let y0: Array1<f64> = ens.adjoints_at(0).column(0).to_owned();
        let (mean, se) = mean_and_se(&y0);
        let target = riccati_p(&params, 0.0);
        assert!(
            (mean - target).abs() < 3.0 * se,
            "mean {mean}, target {target}, se {se}"
        );
    }

    #[test]
    fn mfc_pass_reduces_to_socp_without_kernels() {
        let p = Toy1d {
            c_drift: 0.1,
            c_diff_x: 0.5,
            g_lin: 1.0,
            x0: 0.4,
        };
        let (si, sb) = seeds(7);
        let mut a = simulate_forward(&p, &ZeroPolicy::new(1), 64, 6, si, sb).unwrap();
        let mut b = a.clone();
        backward_adjoint_socp(&p, &mut a).unwrap();
        backward_adjoint_mfc(&p, &mut b).unwrap();
        for (x, y) in a.adjoints.iter().zip(b.adjoints.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn interbank_small_ensemble_matches_straight_line_recursion() {
        let problem = InterbankProblem::new(
            InterbankParams::standard(),
            InitialLaw::Gaussian {
                mean: 0.1,
                std: 0.2,
            },
        );
        let pz = ZeroPolicy::new(1);
        let (si, sb) = seeds(8);
        let mut ens = simulate_forward::<f64>(&problem, &pz, 3, 2, si, sb).unwrap();
        backward_adjoint_mfc(&problem, &mut ens).unwrap();

        // Independent straight-line recursion from the same ensemble data.
        let pr = InterbankParams::standard();
        let (kappa, q, eta, c) = (pr.kappa, pr.q, pr.eta, pr.c);
        let m_particles = 3usize;
        let dt = ens.dt;
        let mean_t: Vec<f64> = (0..=2)
            .map(|n| (0..m_particles).map(|i| ens.states[[n, i, 0]]).sum::<f64>() / 3.0)
            .collect();
        // Terminal: grad g + average of the terminal kernel over donors.
        let mut y = [[0.0f64; 3]; 3]; // y[n][i]
        let g_kernel_mean = (0..m_particles)
            .map(|j| c * (mean_t[2] - ens.states[[2, j, 0]]))
            .sum::<f64>()
            / 3.0;
        for i in 0..m_particles {
            y[2][i] = -c * (mean_t[2] - ens.states[[2, i, 0]]) + g_kernel_mean;
        }
        for n in (0..2).rev() {
            // Kernel average uses donors' Y_{n+1}, u_n and the step mean.
            let kern = (0..m_particles)
                .map(|j| {
                    let u_j = ens.controls[[n, j, 0]];
                    kappa * y[n + 1][j] - q * u_j + eta * (mean_t[n] - ens.states[[n, j, 0]])
                })
                .sum::<f64>()
                / 3.0;
            for i in 0..m_particles {
                let u_i = ens.controls[[n, i, 0]];
                let dx = -kappa * y[n + 1][i] + q * u_i - eta * (mean_t[n] - ens.states[[n, i, 0]]);
                y[n][i] = y[n + 1][i] + (dx + kern) * dt;
            }
        }
        for n in 0..=2 {
            for i in 0..m_particles {
                assert!(
                    (ens.adjoints[[n, i, 0]] - y[n][i]).abs() < 1e-12,
                    "n={n}, i={i}: engine {} vs hand {}",
                    ens.adjoints[[n, i, 0]],
                    y[n][i]
                );
            }
        }
    }

    #[test]
    fn interbank_zeroed_coefficients_freeze_the_adjoint() {
        let problem = InterbankProblem::new(
            InterbankParams {
                kappa: 0.0,
                q: 0.0,
                eta: 0.0,
                c: 2.0,
                sigma: 0.5,
                horizon: 1.0,
            },
            InitialLaw::Gaussian {
                mean: 0.0,
                std: 0.5,
            },
        );
        let (si, sb) = seeds(9);
        let mut ens = simulate_forward::<f64>(&problem, &ZeroPolicy::new(1), 40, 5, si, sb).unwrap();
        backward_adjoint_mfc(&problem, &mut ens).unwrap();
        for n in 0..5 {
            for i in 0..40 {
                assert_eq!(
                    ens.adjoints[[n, i, 0]].to_bits(),
                    ens.adjoints[[5, i, 0]].to_bits()
                );
            }
        }
    }

    #[test]
    fn backward_pass_is_permutation_equivariant() {
        let problem = InterbankProblem::new(
            InterbankParams::standard(),
            InitialLaw::Gaussian {
                mean: 0.1,
                std: 0.2,
            },
        );
        let (si, sb) = seeds(10);
        let mut ens = simulate_forward::<f64>(&problem, &ZeroPolicy::new(1), 12, 4, si, sb).unwrap();
        // Reversed-particle copy sharing the same measure path.
        let m = ens.particles();
        let mut rev = ens.clone();
        for n in 0..=4 {
            for i in 0..m {
                for k in 0..1 {
                    rev.states[[n, i, k]] = ens.states[[n, m - 1 - i, k]];
                }
            }
        }
        for n in 0..4 {
            for i in 0..m {
                rev.controls[[n, i, 0]] = ens.controls[[n, m - 1 - i, 0]];
                rev.increments.values[[i, n, 0]] = ens.increments.values[[m - 1 - i, n, 0]];
            }
        }
        backward_adjoint_mfc(&problem, &mut ens).unwrap();
        backward_adjoint_mfc(&problem, &mut rev).unwrap();
        for n in 0..=4 {
            for i in 0..m {
                let diff = (rev.adjoints[[n, i, 0]] - ens.adjoints[[n, m - 1 - i, 0]]).abs();
                assert!(diff < 1e-12, "n={n}, i={i}: {diff}");
            }
        }
    }

    #[test]
    fn forward_is_bitwise_reproducible_across_thread_counts() {
        let problem = InterbankProblem::new(
            InterbankParams::standard(),
            InitialLaw::Gaussian {
                mean: 0.1,
                std: 0.2,
            },
        );
        let run = || {
            let (si, sb) = seeds(11);
            let mut ens =
                simulate_forward::<f64>(&problem, &ZeroPolicy::new(1), 200, 6, si, sb).unwrap();
            backward_adjoint_mfc(&problem, &mut ens).unwrap();
            ens
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(one.states, four.states);
        for (a, b) in one.adjoints.iter().zip(four.adjoints.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn path_costs_match_direct_sum() {
        let problem = LqProblem::probe_1d(0.8);
        let (si, sb) = seeds(12);
        let ens = simulate_forward::<f64>(&problem, &ZeroPolicy::new(1), 5, 3, si, sb).unwrap();
        let costs = path_costs(&problem, &ens);
        let p = LqParams::standard();
        for i in 0..5 {
            let mut expected = 0.0;
            for n in 0..3 {
                let x = ens.states[[n, i, 0]];
                expected += 0.5 * p.q * x * x * ens.dt; // u = 0
            }
            let xt = ens.states[[3, i, 0]];
            expected += 0.5 * p.s * xt * xt;
            assert!((costs[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn control_gradient_reads_the_requested_adjoint() {
        let problem = LqProblem::probe_1d(0.8);
        let p = LqParams::standard();
        let (si, sb) = seeds(13);
        let mut ens = simulate_forward::<f64>(&problem, &ZeroPolicy::new(1), 6, 3, si, sb).unwrap();
        backward_adjoint_socp(&problem, &mut ens).unwrap();
        let mut next = Array2::zeros((6, 1));
        let mut cur = Array2::zeros((6, 1));
        control_gradient_at(&problem, &ens, 1, YIndex::Next, next.view_mut()).unwrap();
        control_gradient_at(&problem, &ens, 1, YIndex::Current, cur.view_mut()).unwrap();
        for i in 0..6 {
            // duH = b y + r u with u = 0.
            let expect_next = p.b * ens.adjoints[[2, i, 0]];
            let expect_cur = p.b * ens.adjoints[[1, i, 0]];
            assert!((next[[i, 0]] - expect_next).abs() < 1e-14);
            assert!((cur[[i, 0]] - expect_cur).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_before_backward_pass_is_rejected() {
        let problem = LqProblem::probe_1d(0.8);
        let (si, sb) = seeds(14);
        let ens = simulate_forward::<f64>(&problem, &ZeroPolicy::new(1), 4, 2, si, sb).unwrap();
        let mut out = Array2::zeros((4, 1));
        let err = control_gradient_at(&problem, &ens, 0, YIndex::Next, out.view_mut());
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn exploding_drift_aborts_with_step_index() {
        struct Exploder;
        impl ControlProblem<f64> for Exploder {
            fn name(&self) -> &str {
                "exploder"
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
            fn horizon(&self) -> f64 {
                1.0
            }
            fn sample_initial(&self, _rng: &mut ChaCha8Rng, out: &mut [f64]) {
                out[0] = 1.0;
            }
            fn drift(
                &self,
                _t: f64,
                x: &[f64],
                _mu: &MeasureSummary<f64>,
                _u: &[f64],
                out: &mut [f64],
            ) {
                out[0] = x[0] * 1e200; // overflows after two squaring steps
            }
            fn diffusion(
                &self,
                _t: f64,
                _x: &[f64],
                _mu: &MeasureSummary<f64>,
                _u: &[f64],
                out: &mut [f64],
            ) {
                out[0] = 0.0;
            }
            fn running_cost(
                &self,
                _t: f64,
                _x: &[f64],
                _mu: &MeasureSummary<f64>,
                _u: &[f64],
            ) -> f64 {
                0.0
            }
            fn terminal_cost(&self, _x: &[f64], _mu: &MeasureSummary<f64>) -> f64 {
                0.0
            }
            fn grad_terminal(&self, _x: &[f64], _mu: &MeasureSummary<f64>, out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn dx_hamiltonian(
                &self,
                _t: f64,
                _x: &[f64],
                _mu: &MeasureSummary<f64>,
                _y: &[f64],
                _z: ZSample<'_, f64>,
                _u: &[f64],
                out: &mut [f64],
            ) {
                out[0] = 0.0;
            }
            fn du_hamiltonian(
                &self,
                _t: f64,
                _x: &[f64],
                _mu: &MeasureSummary<f64>,
                _y: &[f64],
                _z: ZSample<'_, f64>,
                _u: &[f64],
                out: &mut [f64],
            ) {
                out[0] = 0.0;
            }
        }
        let (si, sb) = seeds(15);
        let err = simulate_forward(&Exploder, &ZeroPolicy::new(1), 2, 4, si, sb).unwrap_err();
        match err {
            Error::NonFinite { quantity, step, .. } => {
                assert_eq!(quantity, "state");
                assert!(step >= 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn probe_passes_on_scalar_lq() {
        let problem = LqProblem::probe_1d(1.0);
        let policy = FeedbackPolicy::new(1, |t: f64, x: &[f64], _mu: &MeasureSummary<f64>, out: &mut [f64]| {
            out[0] = -0.4 * x[0] + 0.1 * t;
        });
        let settings = ProbeSettings {
            n_outer: 150_000,
            n_inner: 24,
            replications: 3_000,
            ..ProbeSettings::default()
        };
        let report = unbiasedness_probe(&problem, &policy, 2, settings, 101).unwrap();
        assert!(
            report.passes(3.0),
            "gap {} at {} sigmas",
            report.gap(),
            report.gap_sigmas()
        );
    }

    #[test]
    fn probe_negative_control_is_detected() {
        let problem = LqProblem::probe_1d(1.0);
        let policy = ZeroPolicy::new(1);
        let settings = ProbeSettings {
            n_outer: 100_000,
            n_inner: 24,
            replications: 2_000,
            negative_control: true,
            ..ProbeSettings::default()
        };
        let report = unbiasedness_probe::<f64>(&problem, &policy, 2, settings, 102).unwrap();
        assert!(
            report.gap_sigmas() > 3.0,
            "negative control went undetected: {} sigmas",
            report.gap_sigmas()
        );
    }

    #[test]
    fn probe_gap_vanishes_without_noise() {
        // sigma = 0 (c = 0) with a deterministic start: both routes follow
        // the same deterministic recursion.
        let params = LqParams {
            c: 0.0,
            ..LqParams::standard()
        };
        let problem = LqProblem::new(1, params, vec![0.8]);
        let policy = ZeroPolicy::new(1);
        let settings = ProbeSettings {
            n_outer: 64,
            n_inner: 4,
            replications: 16,
            ..ProbeSettings::default()
        };
        let report = unbiasedness_probe::<f64>(&problem, &policy, 3, settings, 103).unwrap();
        assert!(
            report.gap().abs() < 1e-10,
            "deterministic gap {}",
            report.gap()
        );
    }

    #[test]
    fn probe_passes_on_scalar_interbank() {
        let problem = InterbankProblem::new(
            InterbankParams::standard(),
            InitialLaw::Gaussian {
                mean: 0.1,
                std: 0.2,
            },
        );
        let policy = FeedbackPolicy::new(1, |_t: f64, x: &[f64], _mu: &MeasureSummary<f64>, out: &mut [f64]| {
            out[0] = -0.5 * x[0];
        });
        let settings = ProbeSettings {
            n_outer: 150_000,
            n_inner: 24,
            replications: 3_000,
            reference_particles: 30_000,
            negative_control: false,
        };
        let report = unbiasedness_probe(&problem, &policy, 2, settings, 104).unwrap();
        assert!(
            report.passes(3.0),
            "gap {} at {} sigmas",
            report.gap(),
            report.gap_sigmas()
        );
    }

    #[test]
    fn probe_rejects_vector_problems() {
        let problem = LqProblem::standard(3);
        let err = unbiasedness_probe::<f64>(
            &problem,
            &ZeroPolicy::new(3),
            2,
            ProbeSettings::default(),
            105,
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn mean_and_se_of_known_sample() {
        let v: Array1<f64> = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let (mean, se) = mean_and_se(&v);
        assert!((mean - 2.5).abs() < 1e-15);
        // Sample variance 5/3, SE = sqrt(5/12).
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
