//! Randomized-feature function approximation.
//!
//! Policies are represented as linear maps over a frozen random feature
//! basis: `phi(x) = (act(A x + b), 1)` with `A`, `b` drawn once from a seeded
//! standard normal and never trained. Fitting a function then reduces to
//! (ridge) least squares on the feature coefficients, i.e. an empirical
//! best approximation in `L^2` of the sampled state distribution, solved
//! through the normal equations.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stochastics::{gaussian_matrix, SeedSpec};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::str::FromStr;
use std::sync::Arc;

/// Pointwise nonlinearity applied to the random projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Hyperbolic tangent (default).
    #[default]
    Tanh,
    /// Rectified linear unit.
    Relu,
    /// Logistic sigmoid.
    Sigmoid,
}

impl Activation {
    /// Applies the nonlinearity to one pre-activation value.
    #[inline]
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(S::zero()),
            Activation::Sigmoid => S::one() / (S::one() + (-x).exp()),
        }
    }

    /// Canonical lowercase name.
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::invalid(
                "activation",
                format!("expected tanh|relu|sigmoid, got `{other}`"),
            )),
        }
    }
}

/// Frozen random projection `x -> (act(A x + b), 1)`.
///
/// The trailing `1` is an explicit bias feature, so the feature dimension is
/// `hidden_size + 1`. Maps are reconstructible from `seed` alone, which is
/// what policy files store instead of the matrices.
#[derive(Debug, Clone)]
pub struct FeatureMap<S: Scalar> {
    /// Projection matrix, shape `(hidden_size, input_dim)`.
    pub a_tilde: Array2<S>,
    /// Projection offsets, length `hidden_size`.
    pub b_tilde: Array1<S>,
    /// Nonlinearity.
    pub activation: Activation,
    /// Seed the matrices were drawn from.
    pub seed: SeedSpec,
}

impl<S: Scalar> FeatureMap<S> {
    /// Draws a fresh map with iid standard-normal entries.
    pub fn new(seed: SeedSpec, input_dim: usize, hidden_size: usize, activation: Activation) -> Self {
        let a_tilde = gaussian_matrix(seed.child(0), hidden_size, input_dim);
        let b_tilde = gaussian_matrix(seed.child(1), hidden_size, 1)
            .index_axis(Axis(1), 0)
            .to_owned();
        FeatureMap {
            a_tilde,
            b_tilde,
            activation,
            seed,
        }
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.a_tilde.ncols()
    }

    /// Number of random features (excluding the bias).
    pub fn hidden_size(&self) -> usize {
        self.a_tilde.nrows()
    }

    /// Feature dimension including the bias column.
    pub fn feature_dim(&self) -> usize {
        self.hidden_size() + 1
    }

    /// Evaluates the feature matrix `Phi`, shape `(points, hidden_size + 1)`.
    pub fn features(&self, points: ArrayView2<S>) -> Array2<S> {
        let n = points.nrows();
        let h = self.hidden_size();
        let pre = points.dot(&self.a_tilde.t());
        let mut out = Array2::ones((n, h + 1));
        let act = self.activation;
        out.slice_mut(ndarray::s![.., ..h])
            .indexed_iter_mut()
            .for_each(|((i, j), v)| *v = act.apply(pre[[i, j]] + self.b_tilde[j]));
        out
    }

    /// Evaluates the feature vector of a single point.
    pub fn features_one(&self, x: &[S]) -> Array1<S> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("slice view");
        self.features(view).index_axis(Axis(0), 0).to_owned()
    }
}

/// Ridge penalty for the normal equations.
///
/// The penalty applies uniformly to every coefficient, bias included. The
/// default is a tiny positive value so fits stay solvable when the sample
/// count is below the feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpec<S: Scalar> {
    /// Penalty weight, `>= 0`.
    pub lambda: S,
}

impl<S: Scalar> Default for RidgeSpec<S> {
    fn default() -> Self {
        RidgeSpec {
            lambda: S::c(1e-8),
        }
    }
}

impl<S: Scalar> RidgeSpec<S> {
    /// A ridge with the given weight.
    pub fn new(lambda: S) -> Self {
        RidgeSpec { lambda }
    }

    /// Exact least squares (no penalty).
    pub fn none() -> Self {
        RidgeSpec { lambda: S::zero() }
    }
}

/// Linear model over a random-feature basis: `x -> clip(Theta phi(x))`.
#[derive(Debug, Clone)]
pub struct RandomFeatureModel<S: Scalar> {
    /// Shared frozen basis.
    pub feature_map: Arc<FeatureMap<S>>,
    /// Coefficients, shape `(output_dim, hidden_size + 1)`; bias weights sit
    /// in the last column.
    pub theta: Array2<S>,
    /// Componentwise output clip; `+inf` disables clipping.
    pub clip_bound: S,
}

impl<S: Scalar> RandomFeatureModel<S> {
    /// The zero function on the given basis.
    pub fn zero(feature_map: Arc<FeatureMap<S>>, output_dim: usize, clip_bound: S) -> Self {
        let cols = feature_map.feature_dim();
        RandomFeatureModel {
            feature_map,
            theta: Array2::zeros((output_dim, cols)),
            clip_bound,
        }
    }

    /// Output dimension.
    pub fn output_dim(&self) -> usize {
        self.theta.nrows()
    }

    /// Evaluates the model on a batch of points (rows), applying the clip.
    pub fn evaluate(&self, points: ArrayView2<S>) -> Array2<S> {
        let phi = self.feature_map.features(points);
        let mut out = phi.dot(&self.theta.t());
        if self.clip_bound < S::infinity() {
            let c = self.clip_bound;
            out.mapv_inplace(|v| v.min(c).max(-c));
        }
        out
    }

    /// Evaluates the model at one point, writing into `out`.
    pub fn evaluate_one(&self, x: &[S], out: &mut [S]) {
        let phi = self.feature_map.features_one(x);
        let c = self.clip_bound;
        for (k, slot) in out.iter_mut().enumerate() {
            let mut acc = S::zero();
            for (j, p) in phi.iter().enumerate() {
                acc += self.theta[[k, j]] * *p;
            }
            *slot = if c < S::infinity() { acc.min(c).max(-c) } else { acc };
        }
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` via an in-place
/// Cholesky factorization; `b` holds one right-hand side per column.
///
/// Fails when a pivot collapses to zero or below, which is how singular
/// normal equations surface.
pub(crate) fn solve_spd<S: Scalar>(mut a: Array2<S>, mut b: Array2<S>) -> Result<Array2<S>> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.nrows(), n);
    // Scale-aware zero threshold: pivots this far below the matrix scale
    // mean rank deficiency rather than roundoff.
    let scale = a.diag().iter().fold(S::zero(), |m, &v| m.max(v.abs()));
    let tiny = scale * S::c(1e-14) + S::min_positive_value();
    for k in 0..n {
        let mut pivot = a[[k, k]];
        for j in 0..k {
            pivot -= a[[k, j] ] * a[[k, j]];
        }
        if !(pivot > tiny) || !pivot.is_finite() {
            return Err(Error::IllConditionedFit);
        }
        let l_kk = pivot.sqrt();
        a[[k, k]] = l_kk;
        for i in (k + 1)..n {
            let mut v = a[[i, k]];
            for j in 0..k {
                v -= a[[i, j]] * a[[k, j]];
            }
            a[[i, k]] = v / l_kk;
        }
    }
    // Forward substitution L y = b, then back substitution L^T x = y.
    let rhs = b.ncols();
    for c in 0..rhs {
        for i in 0..n {
            let mut v = b[[i, c]];
            for j in 0..i {
                v -= a[[i, j]] * b[[j, c]];
            }
            b[[i, c]] = v / a[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = b[[i, c]];
            for j in (i + 1)..n {
                v -= a[[j, i]] * b[[j, c]];
            }
            b[[i, c]] = v / a[[i, i]];
        }
    }
    Ok(b)
}

/// Fits `Theta` by ridge least squares of `targets` on the feature basis.
///
/// `points` is `(samples, input_dim)`, `targets` is `(samples, output_dim)`.
/// Solves `(Phi^T Phi + lambda I) Theta^T = Phi^T targets`; with
/// `lambda = 0` a rank-deficient Gram matrix is an error rather than a
/// silently unstable solve.
pub fn fit<S: Scalar>(
    feature_map: &Arc<FeatureMap<S>>,
    points: ArrayView2<S>,
    targets: ArrayView2<S>,
    ridge: RidgeSpec<S>,
    clip_bound: S,
) -> Result<RandomFeatureModel<S>> {
    if points.nrows() != targets.nrows() {
        return Err(Error::invalid(
            "targets",
            format!(
                "sample counts disagree: {} points vs {} targets",
                points.nrows(),
                targets.nrows()
            ),
        ));
    }
    if points.ncols() != feature_map.input_dim() {
        return Err(Error::invalid(
            "points",
            format!(
                "input dim {} does not match feature map dim {}",
                points.ncols(),
                feature_map.input_dim()
            ),
        ));
    }
    if !(ridge.lambda >= S::zero()) {
        return Err(Error::invalid("ridge", "lambda must be >= 0".to_string()));
    }
    let phi = feature_map.features(points);
    let mut gram = phi.t().dot(&phi);
    let rhs = phi.t().dot(&targets);
    if ridge.lambda > S::zero() {
        for k in 0..gram.nrows() {
            gram[[k, k]] += ridge.lambda;
        }
    }
    let solution = match solve_spd(gram.clone(), rhs.clone()) {
        Ok(w) => w,
        Err(Error::IllConditionedFit) if ridge.lambda > S::zero() => {
            // The requested ridge was too small for the Gram scale; jitter
            // up relative to the diagonal rather than failing the epoch.
            let trace = gram.diag().sum();
            let bump = trace / S::c(gram.nrows() as f64) * S::c(1e-10);
            let mut g = gram;
            for k in 0..g.nrows() {
                g[[k, k]] += bump;
            }
            solve_spd(g, rhs)?
        }
        Err(e) => return Err(e),
    };
    Ok(RandomFeatureModel {
        feature_map: Arc::clone(feature_map),
        theta: solution.t().to_owned(),
        clip_bound,
    })
}

/// Empirical `L^2` projection of sampled function values onto the basis.
///
/// This is the same computation as [`fit`]; the alias exists because the
/// solver uses it in the "project the updated control" role.
pub fn project_l2<S: Scalar>(
    feature_map: &Arc<FeatureMap<S>>,
    points: ArrayView2<S>,
    values: ArrayView2<S>,
    ridge: RidgeSpec<S>,
    clip_bound: S,
) -> Result<RandomFeatureModel<S>> {
    fit(feature_map, points, values, ridge, clip_bound)
}
