//
// Copyright 2026 The hatdp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

//! Seeded randomness: Laplace noise and categorical sampling from log-weights.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// The random stream every mechanism draws from. Seeding it identically
/// reproduces a release bit for bit.
pub type DpRng = ChaCha12Rng;

pub fn seeded(seed: u64) -> DpRng {
    DpRng::seed_from_u64(seed)
}

/// Seed of the `index`-th Monte-Carlo trial.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Zero-mean Laplace draw of scale `b` by inversion of the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `value + Lap(sensitivity / epsilon)`.
pub fn laplace_mechanism<R: Rng + ?Sized>(
    value: f64,
    sensitivity: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    if !(sensitivity >= 0.0 && sensitivity.is_finite()) {
        return Err(Error::domain(format!("sensitivity must be non-negative, got {sensitivity}")));
    }
    Ok(value + sample_laplace(sensitivity / epsilon, rng))
}

/// Normalised probabilities from log-weights. `-inf` entries get probability zero.
pub fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|lw| (lw - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
pub fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let probs = normalize_log_weights(log_weights);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    // rounding left u above the accumulated mass
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sensitivity_is_exact() {
        let mut rng = seeded(1);
        assert_eq!(laplace_mechanism(3.25, 0.0, 1.0, &mut rng).unwrap(), 3.25);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let mut rng = seeded(1);
        assert!(laplace_mechanism(0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, 1.0, -1.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, -1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn seeded_streams_replay() {
        let a: Vec<f64> = (0..8).map(|_| sample_laplace(2.0, &mut seeded(9))).collect();
        let mut r1 = seeded(42);
        let mut r2 = seeded(42);
        for _ in 0..100 {
            assert_eq!(sample_laplace(1.0, &mut r1).to_bits(), sample_laplace(1.0, &mut r2).to_bits());
        }
        assert!(a.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn laplace_is_symmetric_with_unit_mad() {
        let mut rng = seeded(7);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_laplace(1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let mad = draws.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((mad - 1.0).abs() < 0.02, "mad {mad}");
    }

    #[test]
    fn log_weight_sampling_matches_probabilities() {
        let lw = [0.0, f64::NEG_INFINITY, (3.0f64).ln()];
        let p = normalize_log_weights(&lw);
        assert_eq!(p, vec![0.25, 0.0, 0.75]);
        let mut rng = seeded(3);
        let mut hits = [0usize; 3];
        for _ in 0..40_000 {
            hits[sample_log_weights(&lw, &mut rng)] += 1;
        }
        assert_eq!(hits[1], 0);
        assert!((hits[2] as f64 / 40_000.0 - 0.75).abs() < 0.01);
    }
}
