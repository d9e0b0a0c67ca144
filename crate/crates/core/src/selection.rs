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

//! Choice of the array capacity `m_ub`.
//!
//! * the median rule,
//! * the square-root heuristic maximising `Σ min{m_ℓ, m} / √m`,
//! * the minimax rule minimising worst-case clipping error plus expected
//!   noise magnitude,
//! * the convex relaxation that swaps the noise term for the worst-case
//!   inverse gain.
//!
//! All rules search integers in `[m_*, m^*]` and break ties toward smaller m.

use serde::{Deserialize, Serialize};

use crate::dataset::MultiplicityProfile;
use crate::error::{Error, Result};

/// Smallest `m ∈ [m_*, m^*]` maximising `Σ min{m_ℓ, m} / √m`.
pub fn sqrt_heuristic(p: &MultiplicityProfile) -> usize {
    // compare S(a)²·b against S(b)²·a exactly
    let score = |m: usize| {
        let s = p.clipped_total(m) as u128;
        (s * s, m as u128)
    };
    let mut best = p.min_count();
    let (mut best_sq, mut best_m) = score(best);
    for m in p.min_count() + 1..=p.max_count() {
        let (sq, mm) = score(m);
        if sq * best_m > best_sq * mm {
            best = m;
            best_sq = sq;
            best_m = mm;
        }
    }
    best
}

/// Worst case over datasets of `|f_arr − f|` at capacity `m` with fully
/// filled arrays: `U·(1 − Σ min{m_ℓ, m} / Σ m_ℓ)`.
pub fn worst_case_clipping_error(p: &MultiplicityProfile, upper_bound: f64, m: usize) -> f64 {
    upper_bound * (1.0 - p.clipped_total(m) as f64 / p.total() as f64)
}

/// Expected Laplace noise magnitude at the proxy sensitivity:
/// `U·m / (ε·Σ min{m_ℓ, m})`.
pub fn noise_error(p: &MultiplicityProfile, upper_bound: f64, m: usize, epsilon: f64) -> f64 {
    upper_bound * m as f64 / (epsilon * p.clipped_total(m) as f64)
}

pub fn minimax_objective(p: &MultiplicityProfile, upper_bound: f64, m: usize, epsilon: f64) -> f64 {
    worst_case_clipping_error(p, upper_bound, m) + noise_error(p, upper_bound, m, epsilon)
}

/// Minimax capacity `m^(ε)` and its worst-case error `E^(ε)`.
///
/// The objective is concave between consecutive distinct counts, so only
/// the counts themselves are candidates.
pub fn minimax_m(p: &MultiplicityProfile, upper_bound: f64, epsilon: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for m in p.distinct_counts() {
        let e = minimax_objective(p, upper_bound, m, epsilon);
        if e < best.1 {
            best = (m, e);
        }
    }
    best
}

/// `(ε_min, ε_max)`: below `ε_min` the minimax capacity is `m_*`, above
/// `ε_max` it is `m^*`.
pub fn epsilon_boundaries(p: &MultiplicityProfile) -> (f64, f64) {
    let l = p.num_users() as f64;
    let n = p.total() as f64;
    let m_min = p.min_count() as f64;
    (m_min / (l * n), (n / (l * m_min)).powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxCurve {
    pub epsilons: Vec<f64>,
    pub capacities: Vec<usize>,
    /// `E^(ε) / U`.
    pub errors: Vec<f64>,
}

impl MinimaxCurve {
    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }
}

/// Minimax capacity at every grid point. Panics if the capacities are not
/// non-decreasing in ε, which the objective's structure rules out.
pub fn minimax_curve(p: &MultiplicityProfile, upper_bound: f64, grid: &[f64]) -> Result<MinimaxCurve> {
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::domain("epsilon grid values must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("epsilon grid must be sorted ascending"));
    }
    let mut curve = MinimaxCurve { epsilons: grid.to_vec(), capacities: Vec::new(), errors: Vec::new() };
    for &eps in grid {
        let (m, e) = minimax_m(p, upper_bound, eps);
        if let Some(&prev) = curve.capacities.last() {
            assert!(m >= prev, "minimax capacity decreased from {prev} to {m} at epsilon {eps}");
        }
        curve.capacities.push(m);
        curve.errors.push(e / upper_bound);
    }
    Ok(curve)
}

/// Log-spaced grid of `points` values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == points {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (points - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Relaxed objective `Ē(m) = 1 − Σ min{m_ℓ, m}/Σ m_ℓ + max{m, m̄}/m^*` with
/// `m̄` the mean count.
pub fn relaxed_objective(p: &MultiplicityProfile, m: usize) -> f64 {
    let n = p.total() as f64;
    1.0 - p.clipped_total(m) as f64 / n + (m as f64).max(p.mean_count()) / p.max_count() as f64
}

// Ē(m)·N·L·m^*, exact in integers.
fn relaxed_scaled(p: &MultiplicityProfile, m: usize) -> u128 {
    let n = p.total() as u128;
    let l = p.num_users() as u128;
    let top = p.max_count() as u128;
    let gamma = p.clipped_total(m) as u128;
    n * l * top - gamma * l * top + n * (m as u128 * l).max(n)
}

/// The stationary point `m_q` of the relaxed objective, if one exists:
/// `q = Σ m_ℓ / m^*` is an integer and `m_q ≥ m̄`.
pub fn relaxed_stationary_point(p: &MultiplicityProfile) -> Option<usize> {
    let (n, top, l) = (p.total(), p.max_count(), p.num_users());
    if n % top != 0 {
        return None;
    }
    let q = n / top;
    let m_q = p.nth(q);
    // m_q ≥ N / L
    (m_q * l >= n).then_some(m_q)
}

/// Minimiser of the relaxed objective over integers in `[m_*, m^*]`.
///
/// Returns the stationary point `m_q` when it exists. Otherwise the
/// objective is piecewise linear with kinks at the counts and at `m̄`, so the
/// counts and the integers either side of `m̄` are the only candidates; the
/// smallest minimiser among them is returned.
pub fn convex_relaxation_m(p: &MultiplicityProfile) -> usize {
    if let Some(m) = relaxed_stationary_point(p) {
        return m;
    }
    let (lo, hi) = (p.min_count(), p.max_count());
    let mean_floor = p.total() / p.num_users();
    let mut candidates = p.distinct_counts();
    candidates.extend([mean_floor, mean_floor + 1].into_iter().filter(|m| (lo..=hi).contains(m)));
    candidates.sort_unstable();
    candidates.dedup();
    let mut best = candidates[0];
    let mut best_val = relaxed_scaled(p, best);
    for &m in &candidates[1..] {
        let v = relaxed_scaled(p, m);
        if v < best_val {
            best = m;
            best_val = v;
        }
    }
    best
}

/// `η(m) = m / Σ min{m_ℓ, m}`, the noise term up to the factor `U/ε`.
pub fn eta(p: &MultiplicityProfile, m: usize) -> f64 {
    m as f64 / p.clipped_total(m) as f64
}

/// Three equally spaced capacities on which `η` lies strictly above its chord.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcavityWitness {
    pub k: usize,
    pub points: [usize; 3],
    pub values: [f64; 3],
}

/// Witness of the concavity of `η` between `m_{k+1}` and `m_k` (1-based,
/// non-increasing order). Needs `m_k − m_{k+1} > 2`.
///
/// Points are taken strictly inside the gap when it holds three equally
/// spaced integers; for a gap of exactly 3 the left end `m_{k+1}` is used,
/// where `η` still follows the same formula.
pub fn eta_concavity_witness(p: &MultiplicityProfile, k: usize) -> Option<ConcavityWitness> {
    if k == 0 || k >= p.num_users() {
        return None;
    }
    let (hi, lo) = (p.nth(k), p.nth(k + 1));
    if hi - lo <= 2 {
        return None;
    }
    let points = if hi - lo >= 4 {
        let a = lo + 1;
        let span = (hi - 1 - a) / 2 * 2;
        [a, a + span / 2, a + span]
    } else {
        [lo, lo + 1, lo + 2]
    };
    let values = points.map(|m| eta(p, m));
    let witness = ConcavityWitness { k, points, values };
    (2.0 * values[1] > values[0] + values[2]).then_some(witness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prof(c: &[usize]) -> MultiplicityProfile {
        MultiplicityProfile::new(c.to_vec()).unwrap()
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(sqrt_heuristic(&prof(&[4, 1])), 4);
        assert_eq!(sqrt_heuristic(&prof(&[9])), 9);
        assert_eq!(sqrt_heuristic(&prof(&[3, 3, 3])), 3);
        // (100, 1×50): S(1)/1 = 51, S(100)/10 = 15 → 1
        let mut c = vec![100];
        c.extend([1; 50]);
        assert_eq!(sqrt_heuristic(&prof(&c)), 1);
    }

    #[test]
    fn clipping_and_noise_terms() {
        let p = prof(&[4, 2]);
        assert_relative_eq!(worst_case_clipping_error(&p, 1.0, 2), 1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(worst_case_clipping_error(&p, 1.0, 4), 0.0);
        assert_eq!(worst_case_clipping_error(&prof(&[3, 3]), 65.0, 3), 0.0);
        assert_relative_eq!(noise_error(&p, 1.0, 2, 1.0), 0.5);
        assert_relative_eq!(noise_error(&p, 1.0, 2, 2.0), 0.25);
        let q = prof(&[5, 4, 3]);
        assert_relative_eq!(noise_error(&q, 65.0, 3, 0.5), 65.0 / (0.5 * 3.0), max_relative = 1e-15);
    }

    #[test]
    fn minimax_examples() {
        let p = prof(&[4, 2]);
        let (m, e) = minimax_m(&p, 1.0, 1.0);
        assert_eq!(m, 4);
        assert_relative_eq!(e, 2.0 / 3.0, max_relative = 1e-12);
        let (m, e) = minimax_m(&p, 1.0, 0.1);
        assert_eq!(m, 2);
        assert_relative_eq!(e, 1.0 / 3.0 + 5.0, max_relative = 1e-12);
    }

    #[test]
    fn boundaries() {
        let (lo, hi) = epsilon_boundaries(&prof(&[4, 2]));
        assert_relative_eq!(lo, 1.0 / 6.0);
        assert_relative_eq!(hi, 2.25);
        let (lo, hi) = epsilon_boundaries(&prof(&[1, 1, 1, 1]));
        assert_relative_eq!(lo, 1.0 / 16.0);
        assert_relative_eq!(hi, 1.0);
        let (single, _) = epsilon_boundaries(&prof(&[7]));
        assert_relative_eq!(single, 1.0);
        let p = prof(&[4, 2]);
        let (lo, hi) = epsilon_boundaries(&p);
        assert_eq!(minimax_m(&p, 1.0, lo).0, 2);
        assert_eq!(minimax_m(&p, 1.0, hi).0, 4);
    }

    #[test]
    fn curve_two_points() {
        let c = minimax_curve(&prof(&[4, 2]), 1.0, &[0.1, 1.0]).unwrap();
        assert_eq!(c.capacities, vec![2, 4]);
        assert!(minimax_curve(&prof(&[4, 2]), 1.0, &[1.0, 0.1]).is_err());
        assert!(minimax_curve(&prof(&[4, 2]), 1.0, &[0.0]).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(0.001, 2.0, 50);
        assert_eq!(g.len(), 50);
        assert_eq!((g[0], g[49]), (0.001, 2.0));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn relaxation_stationary() {
        let p = prof(&[10, 8, 2]);
        assert_eq!(relaxed_stationary_point(&p), Some(8));
        assert_eq!(convex_relaxation_m(&p), 8);
        assert_relative_eq!(relaxed_objective(&p, 8), 0.9, max_relative = 1e-12);
        assert_relative_eq!(relaxed_objective(&p, 2), 1.0 - 6.0 / 20.0 + (20.0 / 3.0) / 10.0, max_relative = 1e-12);
        assert_relative_eq!(relaxed_objective(&p, 10), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn relaxation_interior_kink_at_mean() {
        // q = 2, m_2 = 2 < m̄ = 8/3: no stationary count; Ē(2) = 11/12, Ē(3) = 7/8, Ē(4) = 1
        let p = prof(&[4, 2, 2]);
        assert_eq!(relaxed_stationary_point(&p), None);
        assert_relative_eq!(relaxed_objective(&p, 2), 11.0 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(relaxed_objective(&p, 3), 7.0 / 8.0, max_relative = 1e-12);
        assert_eq!(convex_relaxation_m(&p), 3);
    }

    #[test]
    fn relaxation_degenerate_and_interior_count() {
        assert_eq!(convex_relaxation_m(&prof(&[5, 5, 5])), 5);
        // q = 2.2 and m̄ = 4.4: Ē rises past m̄, so the minimiser is ⌈m̄⌉ = 5
        let p = prof(&[10, 9, 1, 1, 1]);
        assert_eq!(convex_relaxation_m(&p), 5);
        assert!(relaxed_objective(&p, 5) < relaxed_objective(&p, 4));
        assert!(relaxed_objective(&p, 5) < relaxed_objective(&p, 1).min(relaxed_objective(&p, 10)));
    }

    #[test]
    fn concavity_witness() {
        let w = eta_concavity_witness(&prof(&[10, 2]), 1).unwrap();
        assert_eq!(w.points, [3, 6, 9]);
        assert!(2.0 * w.values[1] > w.values[0] + w.values[2]);
        assert!(eta_concavity_witness(&prof(&[4, 3, 2]), 1).is_none());
        assert!(eta_concavity_witness(&prof(&[4, 3, 2]), 3).is_none());
        let w = eta_concavity_witness(&prof(&[5, 2]), 1).unwrap();
        assert_eq!(w.points, [2, 3, 4]);
        // values quoted for the (10, 2) profile at 4, 6, 8
        let p = prof(&[10, 2]);
        assert_relative_eq!(eta(&p, 4), 4.0 / 6.0);
        assert_relative_eq!(eta(&p, 6), 6.0 / 8.0);
        assert_relative_eq!(eta(&p, 8), 8.0 / 10.0);
    }
}
