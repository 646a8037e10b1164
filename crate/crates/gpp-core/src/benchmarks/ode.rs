//! Small fixed-step ODE toolkit backing the benchmark oracles: classical
//! fourth-order Runge–Kutta with dense output on a uniform grid, plus
//! linear interpolation and Simpson quadrature.
//!
//! Oracles run in `f64` regardless of the solver's scalar type; their
//! accuracy targets (1e-8 against closed forms) assume it.

/// Dense ODE solution on a uniform time grid, ascending in time.
#[derive(Debug, Clone)]
pub struct OdeGrid {
    /// Grid times, ascending, uniformly spaced.
    pub times: Vec<f64>,
    /// `values[k]` is the state at `times[k]`.
    pub values: Vec<Vec<f64>>,
}

impl OdeGrid {
    /// Linear interpolation of state component `comp` at time `t`
    /// (clamped to the grid range).
    pub fn interp(&self, t: f64, comp: usize) -> f64 {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let n = self.times.len() - 1;
        if t <= t0 {
            return self.values[0][comp];
        }
        if t >= t1 {
            return self.values[n][comp];
        }
        let h = (t1 - t0) / n as f64;
        let pos = (t - t0) / h;
        let k = (pos.floor() as usize).min(n - 1);
        let w = pos - k as f64;
        self.values[k][comp] * (1.0 - w) + self.values[k + 1][comp] * w
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` (either direction) with
/// `steps` uniform RK4 steps, recording every grid point.
///
/// The returned grid is ascending in time even when integrating backward.
pub fn rk4<F>(f: F, y0: &[f64], t0: f64, t1: f64, steps: usize) -> OdeGrid
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    assert!(steps > 0, "rk4 needs at least one step");
    let dim = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut y = y0.to_vec();
    times.push(t0);
    values.push(y.clone());

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];

    for s in 0..steps {
        let t = t0 + h * s as f64;
        f(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        times.push(t0 + h * (s + 1) as f64);
        values.push(y.clone());
    }

    if h < 0.0 {
        times.reverse();
        values.reverse();
    }
    OdeGrid { times, values }
}

/// Composite Simpson quadrature of `f` over `[a, b]` with `2 * half_steps`
/// panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, half_steps: usize) -> f64 {
    assert!(half_steps > 0);
    let n = 2 * half_steps;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_solves_exponential_decay() {
        // y' = -y, y(0) = 1 => y(t) = exp(-t).
        let grid = rk4(|_t, y, dy| dy[0] = -y[0], &[1.0], 0.0, 2.0, 200);
        for (t, v) in grid.times.iter().zip(grid.values.iter()) {
            assert!((v[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn rk4_integrates_backward() {
        // y' = y integrated from t=1 (y=e) back to t=0 must give y(0)=1.
        let grid = rk4(
            |_t, y, dy| dy[0] = y[0],
            &[std::f64::consts::E],
            1.0,
            0.0,
            100,
        );
        assert!(grid.times[0] < grid.times[1], "grid must be ascending");
        assert!((grid.times[0]).abs() < 1e-14);
        assert!((grid.values[0][0] - 1.0).abs() < 1e-10);
        assert!((grid.interp(0.5, 0) - 0.5f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_handles_systems() {
        // Harmonic oscillator: (x, v)' = (v, -x); x(t) = cos t.
        let grid = rk4(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            &[1.0, 0.0],
            0.0,
            std::f64::consts::PI,
            400,
        );
        let last = grid.values.last().unwrap();
        assert!((last[0] + 1.0).abs() < 1e-9);
        assert!(last[1].abs() < 1e-9);
    }

    #[test]
    fn interp_is_exact_on_nodes_and_linear_between() {
        let grid = OdeGrid {
            times: vec![0.0, 1.0, 2.0],
            values: vec![vec![0.0], vec![2.0], vec![6.0]],
        };
        assert_eq!(grid.interp(1.0, 0), 2.0);
        assert_eq!(grid.interp(0.5, 0), 1.0);
        assert_eq!(grid.interp(1.5, 0), 4.0);
        assert_eq!(grid.interp(-3.0, 0), 0.0);
        assert_eq!(grid.interp(9.0, 0), 6.0);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        // Simpson is exact on cubics.
        let val = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1);
        assert!((val - (4.0 - 4.0 + 2.0)).abs() < 1e-12);
        let sine = simpson(f64::sin, 0.0, std::f64::consts::PI, 500);
        assert!((sine - 2.0).abs() < 1e-10);
    }
}
