//! Initial-state distributions shared by the one-dimensional mean-field
//! benchmarks, with exact mean/variance accessors used by the value oracles.

use rand_chacha::ChaCha8Rng;
use rand::Rng;

use crate::scalar::Scalar;

/// A one-dimensional initial law with analytically known moments.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// `N(mean, std^2)`.
    Gaussian { mean: f64, std: f64 },
    /// Mixture of Gaussian components `(weight, mean, std)`; weights must
    /// sum to one.
    GaussianMixture(Vec<(f64, f64, f64)>),
    /// `base + J + noise_std * N(0,1)` where the jump `J` is `-k` with
    /// probability 2/5, `0` with probability 1/5 and `+k` with
    /// probability 2/5 (driven by one uniform draw).
    ThreePointWithNoise { base: f64, k: f64, noise_std: f64 },
    /// Uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

impl InitialLaw {
    pub fn sample<S: Scalar>(&self, rng: &mut ChaCha8Rng) -> S {
        let v = match *self {
            InitialLaw::Gaussian { mean, std } => mean + std * f64::standard_normal(rng),
            InitialLaw::GaussianMixture(ref comps) => {
                let pick: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = comps.last().expect("mixture must be non-empty");
                for comp in comps {
                    acc += comp.0;
                    if pick < acc {
                        chosen = comp;
                        break;
                    }
                }
                chosen.1 + chosen.2 * f64::standard_normal(rng)
            }
            InitialLaw::ThreePointWithNoise { base, k, noise_std } => {
                let u: f64 = rng.gen();
                let jump = if 5.0 * u < 2.0 {
                    -k
                } else if 5.0 * u > 3.0 {
                    k
                } else {
                    0.0
                };
                base + jump + noise_std * f64::standard_normal(rng)
            }
            InitialLaw::Uniform { lo, hi } => lo + rng.gen::<f64>() * (hi - lo),
        };
        S::c(v)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { mean, .. } => mean,
            InitialLaw::GaussianMixture(ref comps) => {
                comps.iter().map(|&(w, m, _)| w * m).sum()
            }
            InitialLaw::ThreePointWithNoise { base, .. } => base,
            InitialLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { std, .. } => std * std,
            InitialLaw::GaussianMixture(ref comps) => {
                let mean = self.mean();
                comps
                    .iter()
                    .map(|&(w, m, s)| w * (s * s + m * m))
                    .sum::<f64>()
                    - mean * mean
            }
            InitialLaw::ThreePointWithNoise { k, noise_std, .. } => {
                0.8 * k * k + noise_std * noise_std
            }
            InitialLaw::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::SeedSpec;

    fn moments(law: &InitialLaw, n: usize) -> (f64, f64) {
        let mut rng = SeedSpec::new(99, 0, 0).rng();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let v: f64 = law.sample(&mut rng);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        (mean, sum_sq / n as f64 - mean * mean)
    }

    #[test]
    fn sampled_moments_match_analytic_moments() {
        let n = 400_000;
        let laws = vec![
            InitialLaw::Gaussian {
                mean: 0.1,
                std: 0.2,
            },
            InitialLaw::GaussianMixture(vec![(0.5, -0.0732, 0.1), (0.5, 0.2732, 0.1)]),
            InitialLaw::ThreePointWithNoise {
                base: 0.2,
                k: 0.4629650995927785,
                noise_std: 0.07,
            },
            InitialLaw::Uniform { lo: -1.0, hi: 3.0 },
        ];
        for law in laws {
            let (mean, var) = moments(&law, n);
            let se_mean = (law.variance() / n as f64).sqrt();
            assert!(
                (mean - law.mean()).abs() < 5.0 * se_mean + 1e-4,
                "{law:?}: mean {mean} vs {}",
                law.mean()
            );
            let rel = (var - law.variance()).abs() / law.variance();
            assert!(rel < 0.02, "{law:?}: var {var} vs {}", law.variance());
        }
    }

    #[test]
    fn mixture_weights_are_respected() {
        let law = InitialLaw::GaussianMixture(vec![(0.25, -10.0, 0.01), (0.75, 10.0, 0.01)]);
        let mut rng = SeedSpec::new(3, 0, 0).rng();
        let mut below = 0usize;
        let n = 100_000;
        for _ in 0..n {
            let v: f64 = law.sample(&mut rng);
            if v < 0.0 {
                below += 1;
            }
        }
        let frac = below as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.01, "fraction below: {frac}");
    }
}
