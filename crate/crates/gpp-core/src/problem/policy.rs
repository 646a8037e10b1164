//! Feedback policies: the learned per-step random-feature controls, plus
//! the trivial and closed-form policies used as baselines, and a versioned
//! on-disk format that reproduces a trained policy bit for bit.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Activation, FeatureMap, RandomFeatureModel};
use crate::problem::MeasureSummary;
use crate::scalar::Scalar;
use crate::stochastics::SeedSpec;

/// Which coordinates of the state vector a policy reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMap {
    /// The whole state vector.
    Full,
    /// The listed coordinates, in order.
    Coords(Vec<usize>),
}

impl InputMap {
    /// Dimension of the mapped input given state dimension `d`.
    pub fn input_dim(&self, state_dim: usize) -> usize {
        match self {
            InputMap::Full => state_dim,
            InputMap::Coords(ix) => ix.len(),
        }
    }

    /// Extracts the mapped columns of a `(particles, d)` state block.
    pub fn select<S: Scalar>(&self, states: ArrayView2<S>) -> Array2<S> {
        match self {
            InputMap::Full => states.to_owned(),
            InputMap::Coords(ix) => states.select(Axis(1), ix),
        }
    }

    /// Extracts the mapped coordinates of a single state.
    pub fn select_one<S: Scalar>(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        match self {
            InputMap::Full => out.extend_from_slice(x),
            InputMap::Coords(ix) => out.extend(ix.iter().map(|&i| x[i])),
        }
    }
}

/// A (possibly time-dependent) feedback control rule.
///
/// `step` is the time-grid index; closed-form policies typically use only
/// `t`. Implementations must be deterministic.
pub trait Policy<S: Scalar>: Send + Sync {
    /// Control dimension.
    fn dim_control(&self) -> usize;

    /// Evaluates the control for every row of `states` into `out`
    /// (`(particles, d1)`).
    fn eval_batch(
        &self,
        step: usize,
        t: S,
        states: ArrayView2<S>,
        mu: &MeasureSummary<S>,
        out: ArrayViewMut2<S>,
    );

    /// Evaluates the control at a single state.
    fn eval_one(&self, step: usize, t: S, x: &[S], mu: &MeasureSummary<S>, out: &mut [S]);
}

/// The identically-zero control (the solver's starting iterate).
#[derive(Debug, Clone)]
pub struct ZeroPolicy {
    dim: usize,
}

impl ZeroPolicy {
    /// Zero policy with `dim_control = dim`.
    pub fn new(dim: usize) -> Self {
        ZeroPolicy { dim }
    }
}

impl<S: Scalar> Policy<S> for ZeroPolicy {
    fn dim_control(&self) -> usize {
        self.dim
    }

    fn eval_batch(
        &self,
        _step: usize,
        _t: S,
        _states: ArrayView2<S>,
        _mu: &MeasureSummary<S>,
        mut out: ArrayViewMut2<S>,
    ) {
        out.fill(S::zero());
    }

    fn eval_one(&self, _step: usize, _t: S, _x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        out.iter_mut().for_each(|v| *v = S::zero());
    }
}

/// Wraps a closure `u(t, x, mu) -> control` as a [`Policy`] — used for
/// closed-form optimal controls in tests and error metrics.
pub struct FeedbackPolicy<S, F>
where
    S: Scalar,
    F: Fn(S, &[S], &MeasureSummary<S>, &mut [S]) + Send + Sync,
{
    dim: usize,
    rule: F,
    _marker: std::marker::PhantomData<S>,
}

impl<S, F> FeedbackPolicy<S, F>
where
    S: Scalar,
    F: Fn(S, &[S], &MeasureSummary<S>, &mut [S]) + Send + Sync,
{
    /// Policy computing `rule(t, x, mu)` with control dimension `dim`.
    pub fn new(dim: usize, rule: F) -> Self {
        FeedbackPolicy {
            dim,
            rule,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<S, F> Policy<S> for FeedbackPolicy<S, F>
where
    S: Scalar,
    F: Fn(S, &[S], &MeasureSummary<S>, &mut [S]) + Send + Sync,
{
    fn dim_control(&self) -> usize {
        self.dim
    }

    fn eval_batch(
        &self,
        _step: usize,
        t: S,
        states: ArrayView2<S>,
        mu: &MeasureSummary<S>,
        mut out: ArrayViewMut2<S>,
    ) {
        for (x, mut row) in states.outer_iter().zip(out.outer_iter_mut()) {
            (self.rule)(
                t,
                x.as_slice().expect("contiguous state row"),
                mu,
                row.as_slice_mut().expect("contiguous control row"),
            );
        }
    }

    fn eval_one(&self, _step: usize, t: S, x: &[S], mu: &MeasureSummary<S>, out: &mut [S]) {
        (self.rule)(t, x, mu, out);
    }
}

/// The learned control: one random-feature model per time-grid step.
#[derive(Debug, Clone)]
pub struct PolicySequence<S: Scalar> {
    /// `models[n]` is the feedback rule on `[t_n, t_{n+1})`; length `N`.
    pub models: Vec<RandomFeatureModel<S>>,
    /// Grid times `t_0 .. t_{N-1}` the models are attached to.
    pub times: Vec<S>,
    /// Coordinates the models read.
    pub input_map: InputMap,
}

impl<S: Scalar> PolicySequence<S> {
    /// The zero policy on an `n_steps`-point grid, with fresh feature maps
    /// drawn from `feature_seed.child(n)` for step `n`.
    ///
    /// `clip_bound` is baked into every model.
    pub fn zero(
        feature_seed: SeedSpec,
        n_steps: usize,
        dt: S,
        input_dim: usize,
        control_dim: usize,
        hidden: usize,
        activation: Activation,
        clip_bound: S,
        input_map: InputMap,
    ) -> Self {
        let models = (0..n_steps)
            .map(|n| {
                let map = Arc::new(FeatureMap::new(
                    feature_seed.child(n as u64),
                    input_dim,
                    hidden,
                    activation,
                ));
                RandomFeatureModel::zero(map, control_dim, clip_bound)
            })
            .collect();
        let times = (0..n_steps).map(|n| S::c(n as f64) * dt).collect();
        PolicySequence {
            models,
            times,
            input_map,
        }
    }

    /// Number of time steps.
    pub fn n_steps(&self) -> usize {
        self.models.len()
    }
}

impl<S: Scalar> Policy<S> for PolicySequence<S> {
    fn dim_control(&self) -> usize {
        self.models
            .first()
            .map(|m| m.output_dim())
            .unwrap_or_default()
    }

    fn eval_batch(
        &self,
        step: usize,
        _t: S,
        states: ArrayView2<S>,
        _mu: &MeasureSummary<S>,
        mut out: ArrayViewMut2<S>,
    ) {
        let inputs = self.input_map.select(states);
        let values = self.models[step].evaluate(inputs.view());
        out.assign(&values);
    }

    fn eval_one(&self, step: usize, _t: S, x: &[S], _mu: &MeasureSummary<S>, out: &mut [S]) {
        let mut mapped = Vec::new();
        self.input_map.select_one(x, &mut mapped);
        self.models[step].evaluate_one(&mapped, out);
    }
}

/// Version tag written into policy files.
pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Serializable image of one per-step model.
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFileStep {
    /// Seed that regenerates the step's feature map.
    feature_seed: SeedSpec,
    /// Output weights, row-major `(control_dim, hidden + 1)`.
    theta: Vec<f64>,
}

/// On-disk policy format: everything needed to rebuild a
/// [`PolicySequence<f64>`] exactly (feature maps from seeds, weights
/// verbatim).
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    input_dim: usize,
    control_dim: usize,
    hidden: usize,
    activation: Activation,
    clip_bound: f64,
    input_map: InputMap,
    times: Vec<f64>,
    steps: Vec<PolicyFileStep>,
}

/// Serializes a trained `f64` policy to the versioned JSON format.
pub fn save_policy_file(policy: &PolicySequence<f64>) -> Result<String> {
    let first = policy
        .models
        .first()
        .ok_or_else(|| Error::PolicyFile("policy has no time steps".into()))?;
    let file = PolicyFile {
        version: POLICY_FORMAT_VERSION,
        input_dim: first.feature_map.input_dim(),
        control_dim: first.output_dim(),
        hidden: first.feature_map.hidden_size(),
        activation: first.feature_map.activation,
        clip_bound: first.clip_bound,
        input_map: policy.input_map.clone(),
        times: policy.times.clone(),
        steps: policy
            .models
            .iter()
            .map(|m| PolicyFileStep {
                feature_seed: m.feature_map.seed,
                theta: m.theta.iter().copied().collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::PolicyFile(e.to_string()))
}

/// Reconstructs a policy saved by [`save_policy_file`].
///
/// Feature weights are regenerated from the stored seeds and the output
/// weights are restored verbatim, so the loaded policy evaluates
/// bit-identically to the saved one.
pub fn load_policy_file(json: &str) -> Result<PolicySequence<f64>> {
    let file: PolicyFile =
        serde_json::from_str(json).map_err(|e| Error::PolicyFile(e.to_string()))?;
    if file.version != POLICY_FORMAT_VERSION {
        return Err(Error::PolicyFile(format!(
            "unsupported policy format version {} (expected {})",
            file.version, POLICY_FORMAT_VERSION
        )));
    }
    if file.steps.len() != file.times.len() {
        return Err(Error::PolicyFile(format!(
            "step count {} does not match time count {}",
            file.steps.len(),
            file.times.len()
        )));
    }
    let cols = file.hidden + 1;
    let models = file
        .steps
        .iter()
        .map(|step| {
            if step.theta.len() != file.control_dim * cols {
                return Err(Error::PolicyFile(format!(
                    "weight block has {} entries, expected {}",
                    step.theta.len(),
                    file.control_dim * cols
                )));
            }
            let map = Arc::new(FeatureMap::new(
                step.feature_seed,
                file.input_dim,
                file.hidden,
                file.activation,
            ));
            let theta = Array2::from_shape_vec((file.control_dim, cols), step.theta.clone())
                .map_err(|e| Error::PolicyFile(e.to_string()))?;
            Ok(RandomFeatureModel {
                feature_map: map,
                theta,
                clip_bound: file.clip_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicySequence {
        models,
        times: file.times,
        input_map: file.input_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RidgeSpec;
    use crate::stochastics::{purpose, SeedSpec};
    use ndarray::Array2;

    fn train_toy_policy() -> PolicySequence<f64> {
        let seed = SeedSpec::new(11, purpose::FEATURES, 0);
        let mut policy =
            PolicySequence::zero(seed, 3, 0.1, 2, 1, 16, Activation::Tanh, 5.0, InputMap::Full);
        // Fit each step to a different affine target so steps are distinct.
        let pts = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 2 + j + 1) as f64 * 0.37).sin());
        for (n, model) in policy.models.iter_mut().enumerate() {
            let targets = Array2::from_shape_fn((40, 1), |(i, _)| {
                pts[[i, 0]] * (n as f64 + 0.5) - pts[[i, 1]]
            });
            let map = model.feature_map.clone();
            *model =
                crate::features::fit(&map, pts.view(), targets.view(), RidgeSpec::default(), 5.0)
                    .unwrap();
        }
        policy
    }

    #[test]
    fn zero_policy_outputs_zero() {
        let p = ZeroPolicy::new(2);
        let states = Array2::from_elem((4, 3), 1.0);
        let mut out = Array2::from_elem((4, 2), 9.0);
        Policy::<f64>::eval_batch(
            &p,
            0,
            0.0,
            states.view(),
            &MeasureSummary::empty(),
            out.view_mut(),
        );
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_sequence_outputs_zero_and_respects_grid() {
        let seed = SeedSpec::new(3, purpose::FEATURES, 0);
        let p: PolicySequence<f64> =
            PolicySequence::zero(seed, 4, 0.25, 3, 2, 8, Activation::Tanh, 1.0, InputMap::Full);
        assert_eq!(p.n_steps(), 4);
        assert!((p.times[3] - 0.75).abs() < 1e-15);
        let states = Array2::from_elem((5, 3), 0.7);
        let mut out = Array2::from_elem((5, 2), 1.0);
        p.eval_batch(2, 0.5, states.view(), &MeasureSummary::empty(), out.view_mut());
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coords_input_map_selects_columns() {
        let map = InputMap::Coords(vec![2, 0]);
        let states = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let picked = map.select(states.view());
        assert_eq!(picked, ndarray::array![[3.0, 1.0], [6.0, 4.0]]);
        let mut one = Vec::new();
        map.select_one(&[1.0, 2.0, 3.0], &mut one);
        assert_eq!(one, vec![3.0, 1.0]);
        assert_eq!(map.input_dim(3), 2);
        assert_eq!(InputMap::Full.input_dim(3), 3);
    }

    #[test]
    fn feedback_policy_applies_rule() {
        let p = FeedbackPolicy::new(1, |t: f64, x: &[f64], _mu: &MeasureSummary<f64>, out: &mut [f64]| {
            out[0] = -2.0 * x[0] + t;
        });
        let mut out = [0.0];
        p.eval_one(0, 0.5, &[3.0], &MeasureSummary::empty(), &mut out);
        assert!((out[0] + 5.5).abs() < 1e-15);

        let states = ndarray::array![[1.0], [2.0]];
        let mut batch = Array2::zeros((2, 1));
        p.eval_batch(0, 0.0, states.view(), &MeasureSummary::empty(), batch.view_mut());
        assert_eq!(batch, ndarray::array![[-2.0], [-4.0]]);
    }

    #[test]
    fn batch_and_single_evaluation_agree() {
        let policy = train_toy_policy();
        let states = Array2::from_shape_fn((7, 2), |(i, j)| ((i + 3 * j) as f64 * 0.21).cos());
        let mut batch = Array2::zeros((7, 1));
        policy.eval_batch(1, 0.1, states.view(), &MeasureSummary::empty(), batch.view_mut());
        let mut single = [0.0];
        for i in 0..7 {
            policy.eval_one(
                1,
                0.1,
                states.row(i).as_slice().unwrap(),
                &MeasureSummary::empty(),
                &mut single,
            );
            assert!((single[0] - batch[[i, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_file_round_trip_is_bit_identical() {
        let policy = train_toy_policy();
        let json = save_policy_file(&policy).unwrap();
        let loaded = load_policy_file(&json).unwrap();
        assert_eq!(loaded.n_steps(), policy.n_steps());
        assert_eq!(loaded.input_map, policy.input_map);
        let states = Array2::from_shape_fn((25, 2), |(i, j)| ((i as f64) - 12.0) * 0.3 + j as f64);
        for n in 0..policy.n_steps() {
            let mut a = Array2::zeros((25, 1));
            let mut b = Array2::zeros((25, 1));
            policy.eval_batch(n, 0.0, states.view(), &MeasureSummary::empty(), a.view_mut());
            loaded.eval_batch(n, 0.0, states.view(), &MeasureSummary::empty(), b.view_mut());
            // Bit-level agreement, not approximate agreement.
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn policy_file_rejects_bad_version() {
        let policy = train_toy_policy();
        let json = save_policy_file(&policy).unwrap();
        let bumped = json.replace("\"version\": 1", "\"version\": 99");
        let err = load_policy_file(&bumped).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn policy_file_rejects_malformed_weights() {
        let policy = train_toy_policy();
        let mut json: serde_json::Value =
            serde_json::from_str(&save_policy_file(&policy).unwrap()).unwrap();
        let theta = json["steps"][0]["theta"].as_array_mut().unwrap();
        theta.pop();
        let err = load_policy_file(&json.to_string()).unwrap_err();
        assert!(err.to_string().contains("entries"));
    }
}
