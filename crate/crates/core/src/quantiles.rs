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

//! Private range estimation for array means: the binned concentration
//! interval used by Levy, and exponential-mechanism quantiles used by
//! Quantile.
//!
//! Every sampler here has a companion that returns the exact output
//! distribution, so privacy ratios can be checked without sampling.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::{normalize_log_weights, sample_log_weights};

/// A privately estimated interval `[lower, upper] ⊆ [0, U]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalEstimate {
    pub lower: f64,
    pub upper: f64,
    /// Concentration radius; only set by [`private_interval`].
    pub tau: Option<f64>,
    /// Selection probabilities of the candidate centres, when available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn project(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }
}

/// `τ = U·sqrt(ln(2K̄/γ) / (2·m_ub))`: radius within which all array means of
/// i.i.d. bounded samples fall with probability at least `1 − γ`.
pub fn concentration_radius(upper_bound: f64, num_arrays: usize, gamma: f64, m_ub: usize) -> f64 {
    upper_bound * ((2.0 * num_arrays as f64 / gamma).ln() / (2.0 * m_ub as f64)).sqrt()
}

/// Partition of `[0, U]` into bins of width `τ`; the last bin may be narrower.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    width: f64,
    upper_bound: f64,
    midpoints: Vec<f64>,
}

impl BinGrid {
    pub fn new(upper_bound: f64, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= upper_bound) {
            return Err(Error::domain(format!("bin width {width} must lie in (0, {upper_bound}]")));
        }
        let mut n = (upper_bound / width).ceil() as usize;
        // ratio a hair above an integer from rounding
        if n > 1 && (n - 1) as f64 * width >= upper_bound * (1.0 - 1e-12) {
            n -= 1;
        }
        let midpoints = (0..n)
            .map(|k| {
                let lo = k as f64 * width;
                let hi = if k + 1 == n { upper_bound } else { (k + 1) as f64 * width };
                0.5 * (lo + hi)
            })
            .collect();
        Ok(BinGrid { width, upper_bound, midpoints })
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }

    /// Index of the midpoint nearest to `x` (lower index on exact ties).
    pub fn nearest(&self, x: f64) -> usize {
        let x = x.clamp(0.0, self.upper_bound);
        let k = ((x / self.width).floor() as usize).min(self.len() - 1);
        if k > 0 && (x - self.midpoints[k - 1]).abs() <= (x - self.midpoints[k]).abs() {
            k - 1
        } else {
            k
        }
    }
}

/// Exact selection probabilities over the bin midpoints for the binned
/// interval estimator. `bins[i]` is the midpoint index assigned to array `i`.
pub fn interval_selection_probabilities(bins: &[usize], num_bins: usize, epsilon: f64) -> Vec<f64> {
    let mut hist = vec![0usize; num_bins];
    for &b in bins {
        hist[b] += 1;
    }
    let total = bins.len();
    let mut below = 0usize;
    let mut log_weights = Vec::with_capacity(num_bins);
    for &h in &hist {
        let above = total - below - h;
        let cost = below.max(above) as f64;
        log_weights.push(-epsilon * cost / 2.0);
        below += h;
    }
    normalize_log_weights(&log_weights)
}

/// Binned private interval. Each array mean snaps to its nearest bin
/// midpoint; a midpoint `x` is chosen with probability `∝ exp(−ε·c(x)/2)`
/// where `c(x)` is the larger of the counts strictly below and strictly above
/// `x`, and the interval is the chosen midpoint `± 3τ/2` clamped to `[0, U]`.
pub fn private_interval<R: Rng + ?Sized>(
    array_means: &[f64],
    epsilon: f64,
    tau: f64,
    upper_bound: f64,
    rng: &mut R,
) -> Result<IntervalEstimate> {
    if array_means.is_empty() {
        return Err(Error::domain("private interval needs at least one array mean"));
    }
    check_epsilon(epsilon)?;
    let grid = BinGrid::new(upper_bound, tau)?;
    let bins: Vec<usize> = array_means.iter().map(|&m| grid.nearest(m)).collect();
    let probs = interval_selection_probabilities(&bins, grid.len(), epsilon);
    let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let centre = grid.midpoints()[sample_log_weights(&log_probs, rng)];
    Ok(IntervalEstimate {
        lower: (centre - 1.5 * tau).max(0.0),
        upper: (centre + 1.5 * tau).min(upper_bound),
        tau: Some(tau),
        trace: Some(probs),
    })
}

/// One piece of the exponential-mechanism quantile's output density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPiece {
    pub lower: f64,
    pub upper: f64,
    pub density: f64,
}

struct Gaps {
    bounds: Vec<f64>,
    log_weights: Vec<f64>,
    // per-gap log density before normalisation, i.e. ε·u/2
    log_heights: Vec<f64>,
}

fn quantile_gaps(values: &[f64], q: f64, epsilon: f64, upper_bound: f64) -> Result<Gaps> {
    if values.is_empty() {
        return Err(Error::domain("quantile estimation needs at least one value"));
    }
    check_epsilon(epsilon)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("quantile level {q} outside [0, 1]")));
    }
    let n = values.len();
    let mut bounds = Vec::with_capacity(n + 2);
    bounds.push(0.0);
    bounds.extend(values.iter().map(|v| v.clamp(0.0, upper_bound)));
    bounds.push(upper_bound);
    bounds[1..=n].sort_by(f64::total_cmp);

    let target = q * n as f64;
    let mut log_weights = Vec::with_capacity(n + 1);
    let mut log_heights = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let len = bounds[i + 1] - bounds[i];
        let h = -epsilon * (i as f64 - target).abs() / 2.0;
        log_heights.push(h);
        log_weights.push(if len > 0.0 { len.ln() + h } else { f64::NEG_INFINITY });
    }
    Ok(Gaps { bounds, log_weights, log_heights })
}

/// Exponential-mechanism estimate of the `q`-quantile of `values ⊆ [0, U]`.
///
/// The sorted values and the sentinels `0`, `U` split `[0, U]` into `n + 1`
/// gaps; gap `i` has utility `−|i − q·n|` and is picked with probability
/// proportional to its length times `exp(ε·u/2)`. The output is uniform in
/// the chosen gap.
pub fn exp_mech_quantile<R: Rng + ?Sized>(
    values: &[f64],
    q: f64,
    epsilon: f64,
    upper_bound: f64,
    rng: &mut R,
) -> Result<f64> {
    let gaps = quantile_gaps(values, q, epsilon, upper_bound)?;
    let i = sample_log_weights(&gaps.log_weights, rng);
    let (lo, hi) = (gaps.bounds[i], gaps.bounds[i + 1]);
    let u: f64 = rng.random();
    Ok((lo + u * (hi - lo)).clamp(lo, hi))
}

/// Exact output density of [`exp_mech_quantile`] as constant pieces over
/// the non-empty gaps.
pub fn exp_mech_quantile_density(values: &[f64], q: f64, epsilon: f64, upper_bound: f64) -> Result<Vec<DensityPiece>> {
    let gaps = quantile_gaps(values, q, epsilon, upper_bound)?;
    let max = gaps.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = gaps.log_weights.iter().map(|w| (w - max).exp()).sum();
    Ok((0..gaps.log_heights.len())
        .filter(|&i| gaps.bounds[i + 1] > gaps.bounds[i])
        .map(|i| DensityPiece {
            lower: gaps.bounds[i],
            upper: gaps.bounds[i + 1],
            density: (gaps.log_heights[i] - max).exp() / z,
        })
        .collect())
}

fn ordered_pair(a: f64, b: f64, upper_bound: f64) -> IntervalEstimate {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    IntervalEstimate { lower: lo.clamp(0.0, upper_bound), upper: hi.clamp(0.0, upper_bound), tau: None, trace: None }
}

/// Interquantile interval at levels `(q_lo, q_hi)`, each endpoint at half the
/// stage budget. Inverted endpoints are swapped.
pub fn quantile_interval<R: Rng + ?Sized>(
    array_means: &[f64],
    levels: (f64, f64),
    epsilon_stage: f64,
    upper_bound: f64,
    rng: &mut R,
) -> Result<IntervalEstimate> {
    let a = exp_mech_quantile(array_means, levels.0, epsilon_stage / 2.0, upper_bound, rng)?;
    let b = exp_mech_quantile(array_means, levels.1, epsilon_stage / 2.0, upper_bound, rng)?;
    Ok(ordered_pair(a, b, upper_bound))
}

pub const FIXED_LEVELS: (f64, f64) = (0.1, 0.9);

/// The `(1/10, 9/10)` interquantile interval.
pub fn fixed_quantile_interval<R: Rng + ?Sized>(
    array_means: &[f64],
    epsilon_stage: f64,
    upper_bound: f64,
    rng: &mut R,
) -> Result<IntervalEstimate> {
    quantile_interval(array_means, FIXED_LEVELS, epsilon_stage, upper_bound, rng)
}

/// `⌈2/ε⌉`, the number of array means trimmed from each end by the
/// optimized variant.
pub fn trim_rank(epsilon_total: f64) -> usize {
    // 2/ε can land a few ulps above an integer (ε = 2/3)
    ((2.0 / epsilon_total) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Quantile levels of the optimized variant, `(t/K̄, 1 − t/K̄)` with
/// `t = ⌈2/ε⌉`. When `K̄ < 2/ε` the ranks fall back to the extremes
/// (`t = 1`) and `fell_back` is set.
pub fn optimized_levels(num_arrays: usize, epsilon_total: f64) -> (f64, f64, bool) {
    let k = num_arrays as f64;
    let (t, fell_back) = if k < 2.0 / epsilon_total { (1, true) } else { (trim_rank(epsilon_total), false) };
    let q = t as f64 / k;
    (q, 1.0 - q, fell_back)
}

/// Interval trimming the `⌈2/ε⌉` most extreme array means from each side.
/// Returns the estimate and whether the rank fallback fired.
pub fn optimized_quantile_interval<R: Rng + ?Sized>(
    array_means: &[f64],
    epsilon_total: f64,
    epsilon_stage: f64,
    upper_bound: f64,
    rng: &mut R,
) -> Result<(IntervalEstimate, bool)> {
    check_epsilon(epsilon_total)?;
    let (lo, hi, fell_back) = optimized_levels(array_means.len(), epsilon_total);
    let est = quantile_interval(array_means, (lo, hi), epsilon_stage, upper_bound, rng)?;
    Ok((est, fell_back))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("epsilon must be positive and finite, got {epsilon}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::seeded;
    use approx::assert_relative_eq;

    #[test]
    fn radius_examples() {
        assert_relative_eq!(concentration_radius(1.0, 4, 0.2, 8), (40f64.ln() / 16.0).sqrt(), max_relative = 1e-12);
        assert!((concentration_radius(1.0, 4, 0.2, 8) - 0.48017).abs() < 1e-5);
        // γ = 2K̄ makes the log vanish
        assert_eq!(concentration_radius(65.0, 3, 6.0, 10), 0.0);
        let r1 = concentration_radius(65.0, 50, 0.2, 4);
        let r4 = concentration_radius(65.0, 50, 0.2, 16);
        assert_relative_eq!(r1 / r4, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn grid_has_narrow_last_bin() {
        let g = BinGrid::new(10.0, 4.0).unwrap();
        assert_eq!(g.midpoints(), &[2.0, 6.0, 9.0]);
        assert_eq!(g.nearest(8.1), 2);
        assert_eq!(g.nearest(7.9), 1);
        assert_eq!(g.nearest(0.0), 0);
        assert_eq!(g.nearest(10.0), 2);
        // exact tie between 2 and 6 goes low
        assert_eq!(g.nearest(4.0), 0);
        let g = BinGrid::new(65.0, 13.0).unwrap();
        assert_eq!(g.len(), 5);
        assert!(BinGrid::new(1.0, 2.0).is_err());
        assert!(BinGrid::new(1.0, 0.0).is_err());
    }

    #[test]
    fn selection_costs() {
        // bins 0..4, means in bins 1,1,2: costs (3,1,2,3)
        let p = interval_selection_probabilities(&[1, 1, 2], 4, 2.0);
        let w: Vec<f64> = [3.0, 1.0, 2.0, 3.0].iter().map(|c: &f64| (-c).exp()).collect();
        let z: f64 = w.iter().sum();
        for (a, b) in p.iter().zip(w.iter()) {
            assert_relative_eq!(*a, b / z, max_relative = 1e-12);
        }
    }

    #[test]
    fn interval_concentrates_and_is_narrow() {
        let mut rng = seeded(5);
        let est = private_interval(&[5.2; 40], 50.0, 1.0, 10.0, &mut rng).unwrap();
        assert_eq!((est.lower, est.upper), (4.0, 7.0));
        for seed in 0..200 {
            let e = private_interval(&[1.0, 9.0, 3.3], 0.5, 2.5, 10.0, &mut seeded(seed)).unwrap();
            assert!(e.width() <= 3.0 * 2.5 + 1e-12);
            assert!(0.0 <= e.lower && e.lower <= e.upper && e.upper <= 10.0);
        }
        assert!(private_interval(&[], 1.0, 1.0, 10.0, &mut rng).is_err());
        assert!(private_interval(&[1.0], 0.0, 1.0, 10.0, &mut rng).is_err());
    }

    #[test]
    fn quantile_density_integrates_to_one() {
        let pieces = exp_mech_quantile_density(&[2.0, 2.0, 5.0, 9.5], 0.3, 1.0, 10.0).unwrap();
        let mass: f64 = pieces.iter().map(|p| p.density * (p.upper - p.lower)).sum();
        assert_relative_eq!(mass, 1.0, max_relative = 1e-12);
        // the zero-width gap between the two 2.0s carries nothing
        assert_eq!(pieces.len(), 4);
    }

    #[test]
    fn single_value_two_gaps() {
        // n = 1, q = 1/2: both gaps have utility −1/2, so the output is uniform on [0, U]
        let pieces = exp_mech_quantile_density(&[3.0], 0.5, 100.0, 10.0).unwrap();
        for p in &pieces {
            assert_relative_eq!(p.density, 0.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn quantile_output_in_range() {
        let mut rng = seeded(11);
        for _ in 0..500 {
            let x = exp_mech_quantile(&[0.0, 65.0, 30.0], 0.9, 0.3, 65.0, &mut rng).unwrap();
            assert!((0.0..=65.0).contains(&x));
        }
        assert!(exp_mech_quantile(&[], 0.5, 1.0, 1.0, &mut rng).is_err());
        assert!(exp_mech_quantile(&[0.5], 1.5, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn equal_values_concentrate() {
        let mut rng = seeded(2);
        let vals: Vec<f64> = (0..30).map(|i| 20.0 + i as f64 * 0.01).collect();
        let far = (0..1000)
            .filter(|_| (exp_mech_quantile(&vals, 0.5, 2.0, 65.0, &mut rng).unwrap() - 20.0).abs() > 1.0)
            .count();
        assert!(far < 10, "{far}");
    }

    #[test]
    fn fixed_interval_on_uniform_means() {
        let means: Vec<f64> = (0..101).map(|i| 20.0 + i as f64 / 10.0).collect();
        let mut rng = seeded(8);
        let est = fixed_quantile_interval(&means, 200.0, 65.0, &mut rng).unwrap();
        assert!((est.lower - 21.0).abs() < 0.3, "{est:?}");
        assert!((est.upper - 29.0).abs() < 0.3, "{est:?}");
    }

    #[test]
    fn swap_guard() {
        for seed in 0..300 {
            let est = fixed_quantile_interval(&[10.0, 11.0], 0.05, 65.0, &mut seeded(seed)).unwrap();
            assert!(est.lower <= est.upper);
        }
    }

    #[test]
    fn trim_ranks() {
        assert_eq!(trim_rank(1.0), 2);
        assert_eq!(trim_rank(0.5), 4);
        assert_eq!(trim_rank(2.0 / 3.0), 3);
        assert_eq!(trim_rank(1.5), 2);
        assert_eq!(trim_rank(2.0), 1);
        let (lo, hi, fb) = optimized_levels(164, 1.0);
        assert_eq!((lo, hi, fb), (2.0 / 164.0, 1.0 - 2.0 / 164.0, false));
        let (lo, hi, fb) = optimized_levels(3, 0.5);
        assert!(fb);
        assert_eq!((lo, hi), (1.0 / 3.0, 1.0 - 1.0 / 3.0));
    }
}
