//! Particle-based gradient projection for finite-horizon stochastic optimal
//! control and mean-field (McKean–Vlasov) control.
//!
//! The solver iterates three steps: simulate an ensemble of controlled state
//! paths forward with Euler–Maruyama, estimate the adjoint (costate) process
//! backward sample-by-sample, and push each time step's feedback policy down
//! the estimated cost gradient, re-projecting it onto a random-feature basis
//! by ridge regression.
//!
//! Everything numeric is generic over the scalar type via [`Scalar`]
//! (implemented for `f32` and `f64`); concrete `f64` aliases are exported at
//! the crate root for the common case.

pub mod benchmarks;
pub mod engine;
pub mod error;
pub mod features;
pub mod problem;
pub mod scalar;
pub mod solver;
pub mod stochastics;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type used by the CLI and the shipped benchmark configs.
pub type Real = f64;

/// `f64` feature map.
pub type FeatureMap64 = features::FeatureMap<f64>;
/// `f64` random-feature regression model.
pub type RandomFeatureModel64 = features::RandomFeatureModel<f64>;
/// `f64` time-indexed policy.
pub type PolicySequence64 = problem::PolicySequence<f64>;
/// `f64` particle ensemble.
pub type ParticleEnsemble64 = engine::ParticleEnsemble<f64>;
/// `f64` training report.
pub type RunReport64 = solver::RunReport<f64>;
