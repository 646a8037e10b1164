//! Deterministic random-number supply for particle simulations.
//!
//! Every random object in the crate is keyed by a [`SeedSpec`]: a
//! `(master_seed, stream_id, substream)` triple hashed into a ChaCha8 seed.
//! Distinct triples give statistically independent generators, and a given
//! triple always reproduces the same draws, so a simulation is a pure
//! function of its seeds no matter how many threads execute it.
//!
//! Convention used by the solver: `stream_id` names the *context* (training
//! Brownian draws, evaluation draws, feature maps, ...; see [`purpose`]) and
//! `substream` distinguishes repetitions of that context (the training
//! epoch, an oracle replication, ...). Per-entity generators — one per
//! particle, one per time step — are then derived with [`SeedSpec::child`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{Array2, Array3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Stream-context codes used by the solver. Purely a naming convention;
/// any `u64` is a valid `stream_id`.
pub mod purpose {
    /// Brownian increments of a training epoch.
    pub const TRAIN_BROWNIAN: u64 = 1;
    /// Initial states of a training epoch.
    pub const TRAIN_INITIAL: u64 = 2;
    /// Brownian increments of an evaluation run.
    pub const EVAL_BROWNIAN: u64 = 3;
    /// Initial states of an evaluation run.
    pub const EVAL_INITIAL: u64 = 4;
    /// Random-feature map construction (per time step).
    pub const FEATURES: u64 = 5;
    /// Monte-Carlo oracles.
    pub const ORACLE: u64 = 6;
    /// Unbiasedness probe, sample-wise route.
    pub const PROBE_PARTICLE: u64 = 7;
    /// Unbiasedness probe, conditional-expectation route.
    pub const PROBE_NESTED: u64 = 8;
}

/// Key identifying one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SeedSpec {
    /// Experiment-level seed (the CLI `seed` key).
    pub master_seed: u64,
    /// Context within the experiment.
    pub stream_id: u64,
    /// Repetition counter within the context.
    pub substream: u64,
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_B: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_C: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 output function: a bijective avalanche on 64 bits.
#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(MIX_B);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_C);
    z ^ (z >> 31)
}

impl SeedSpec {
    /// Builds a spec from its three components.
    pub fn new(master_seed: u64, stream_id: u64, substream: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_id,
            substream,
        }
    }

    /// Derives the spec of the `index`-th entity (particle, time step, ...)
    /// inside this stream. Children of distinct parents collide only with
    /// negligible hash probability.
    pub fn child(&self, index: u64) -> SeedSpec {
        let folded = splitmix(self.stream_id ^ splitmix(self.substream));
        SeedSpec {
            master_seed: self.master_seed,
            stream_id: folded,
            substream: index,
        }
    }

    /// Instantiates the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut x = self.master_seed ^ GAMMA;
        x = splitmix(x.wrapping_add(self.stream_id.wrapping_mul(MIX_B)));
        x = splitmix(x.wrapping_add(self.substream.wrapping_mul(MIX_C)));
        let mut seed = [0u8; 32];
        for word in 0..4 {
            x = splitmix(x);
            seed[word * 8..(word + 1) * 8].copy_from_slice(&x.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Brownian-increment tensor for an ensemble of paths.
///
/// `values[[i, n, j]]` is component `j` of particle `i`'s increment over
/// `[t_n, t_{n+1})`; each entry is `N(0, dt)`.
#[derive(Debug, Clone)]
pub struct BrownianIncrements<S: Scalar> {
    /// Increments, shape `(particles, steps, noise_dim)`.
    pub values: Array3<S>,
    /// Time-step length.
    pub dt: S,
}

/// Fills a `rows x cols` matrix with independent standard normals drawn
/// sequentially from the stream identified by `seed`.
pub fn gaussian_matrix<S: Scalar>(seed: SeedSpec, rows: usize, cols: usize) -> Array2<S> {
    let mut rng = seed.rng();
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = S::standard_normal(&mut rng);
    }
    out
}

/// Draws Brownian increments for `particles` paths over `steps` steps of
/// length `dt` with `noise_dim` independent components.
///
/// Particle `i` consumes only the stream `seed.child(i)`, so its increments
/// do not depend on the total particle count or on the parallel schedule.
pub fn brownian_increments<S: Scalar>(
    seed: SeedSpec,
    particles: usize,
    steps: usize,
    noise_dim: usize,
    dt: S,
) -> Result<BrownianIncrements<S>> {
    if !(dt > S::zero()) || !dt.is_finite() {
        return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
    }
    if particles == 0 || steps == 0 || noise_dim == 0 {
        return Err(Error::invalid(
            "shape",
            format!("particles={particles}, steps={steps}, noise_dim={noise_dim} must all be >= 1"),
        ));
    }
    let sqrt_dt = dt.sqrt();
    let mut values = Array3::zeros((particles, steps, noise_dim));
    let block = steps * noise_dim;
    values
        .as_slice_mut()
        .expect("freshly allocated tensor is contiguous")
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut rng = seed.child(i as u64).rng();
            for v in chunk.iter_mut() {
                *v = sqrt_dt * S::standard_normal(&mut rng);
            }
        });
    Ok(BrownianIncrements { values, dt })
}
