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

//! Sensitivities and the end-to-end release mechanisms.
//!
//! Every mechanism is split into a deterministic preparation step (capacity
//! selection, grouping, array means) and a randomized release, so Monte-Carlo
//! evaluation can reuse one preparation across many trials.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{HatDataset, MultiplicityProfile};
use crate::error::{Error, Result};
use crate::grouping::{self, FillMode, GroupingResult, Strategy};
use crate::noise::{self, DpRng};
use crate::quantiles::{self, IntervalEstimate};
use crate::selection;

/// Default Levy failure probability.
pub const DEFAULT_GAMMA: f64 = 0.2;

pub const STAGE_MEAN: &str = "mean";
pub const STAGE_INTERVAL: &str = "interval";
pub const STAGE_LOWER: &str = "interval-lower";
pub const STAGE_UPPER: &str = "interval-upper";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetShare {
    pub stage: String,
    pub fraction: f64,
}

/// Total ε and how it is divided between sequentially composed stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub split: Vec<BudgetShare>,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, split: &[(&str, f64)]) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::domain(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        if split.iter().any(|(_, f)| *f <= 0.0) {
            return Err(Error::domain("budget fractions must be positive"));
        }
        let sum: f64 = split.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("budget fractions sum to {sum}, not 1")));
        }
        Ok(PrivacyBudget {
            epsilon,
            split: split.iter().map(|(s, f)| BudgetShare { stage: s.to_string(), fraction: *f }).collect(),
        })
    }

    /// Whole budget on the noisy mean.
    pub fn single(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, &[(STAGE_MEAN, 1.0)])
    }

    /// Half on the interval, half on the mean.
    pub fn interval_then_mean(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, &[(STAGE_INTERVAL, 0.5), (STAGE_MEAN, 0.5)])
    }

    /// A quarter on each quantile endpoint, half on the mean.
    pub fn two_quantiles_then_mean(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, &[(STAGE_LOWER, 0.25), (STAGE_UPPER, 0.25), (STAGE_MEAN, 0.5)])
    }

    pub fn fraction(&self, stage: &str) -> f64 {
        self.split.iter().filter(|s| s.stage == stage).map(|s| s.fraction).sum()
    }

    pub fn stage_epsilon(&self, stage: &str) -> f64 {
        self.epsilon * self.fraction(stage)
    }
}

/// Result of one private release.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismReport {
    pub mechanism: String,
    pub released_mean: f64,
    /// The statistic before noise.
    pub clipped_statistic: f64,
    pub sensitivity: f64,
    /// Laplace scale, `sensitivity / ε_mean`.
    pub noise_scale: f64,
    pub m_ub: Option<usize>,
    pub strategy: Option<Strategy>,
    pub num_arrays: Option<usize>,
    pub budget: PrivacyBudget,
    pub interval: Option<(f64, f64)>,
    /// `(ε_min, ε_max)` of the minimax capacity, when that rule chose `m_ub`.
    pub epsilon_regime: Option<(f64, f64)>,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

/// `U·m^* / Σ m_ℓ`.
pub fn baseline_sensitivity(upper_bound: f64, max_count: usize, total: usize) -> f64 {
    upper_bound * max_count as f64 / total as f64
}

pub fn sensitivity_baseline(p: &MultiplicityProfile, upper_bound: f64) -> f64 {
    baseline_sensitivity(upper_bound, p.max_count(), p.total())
}

/// `2U/K` for WrapAround (a user may touch two arrays), `U/K̄` for BestFit.
pub fn sensitivity_array(g: &GroupingResult, upper_bound: f64) -> f64 {
    array_sensitivity(g.strategy, g.num_arrays(), upper_bound)
}

pub fn array_sensitivity(strategy: Strategy, num_arrays: usize, upper_bound: f64) -> f64 {
    let k = num_arrays as f64;
    match strategy {
        Strategy::WrapAround => 2.0 * upper_bound / k,
        Strategy::BestFit => upper_bound / k,
    }
}

/// Fully-filled proxy `U·m / Σ min{m_ℓ, m}` for the BestFit sensitivity.
pub fn proxy_array_sensitivity(p: &MultiplicityProfile, upper_bound: f64, m: usize) -> f64 {
    upper_bound * m as f64 / p.clipped_total(m) as f64
}

/// Levy's data-independent sensitivity bound `min{3τ, U} / K̄`.
pub fn levy_sensitivity_bound(upper_bound: f64, num_arrays: usize, gamma: f64, m_ub: usize) -> f64 {
    let tau = quantiles::concentration_radius(upper_bound, num_arrays, gamma, m_ub);
    (3.0 * tau).min(upper_bound) / num_arrays as f64
}

/// How the array capacity is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MubRule {
    Median,
    Sqrt,
    Minimax,
    Relaxed,
    Fixed(usize),
}

impl MubRule {
    pub fn resolve(&self, p: &MultiplicityProfile, upper_bound: f64, epsilon: f64) -> Result<usize> {
        let m = match *self {
            MubRule::Median => p.median(),
            MubRule::Sqrt => selection::sqrt_heuristic(p),
            MubRule::Minimax => selection::minimax_m(p, upper_bound, epsilon).0,
            MubRule::Relaxed => selection::convex_relaxation_m(p),
            MubRule::Fixed(m) => m,
        };
        if m == 0 {
            return Err(Error::domain("m_ub must be positive"));
        }
        if m < p.min_count() || m > p.max_count() {
            log::warn!("m_ub {m} outside [{}, {}]", p.min_count(), p.max_count());
        }
        Ok(m)
    }
}

impl fmt::Display for MubRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MubRule::Median => f.write_str("median"),
            MubRule::Sqrt => f.write_str("sqrt"),
            MubRule::Minimax => f.write_str("minimax"),
            MubRule::Relaxed => f.write_str("relaxed"),
            MubRule::Fixed(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for MubRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(MubRule::Median),
            "sqrt" => Ok(MubRule::Sqrt),
            "minimax" => Ok(MubRule::Minimax),
            "relaxed" => Ok(MubRule::Relaxed),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|m| *m > 0)
                .map(MubRule::Fixed)
                .ok_or_else(|| Error::Config(format!("unknown m_ub rule `{other}`"))),
        }
    }
}

impl TryFrom<String> for MubRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MubRule> for String {
    fn from(r: MubRule) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileVariant {
    /// `(1/10, 9/10)` interquantile interval.
    Fixed,
    /// Trims `⌈2/ε⌉` array means from each end.
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mechanism {
    Baseline,
    ArrayAveraging { m_ub: MubRule, strategy: Strategy, fill: FillMode },
    Levy { gamma: f64, fill: FillMode },
    Quantile { variant: QuantileVariant, fill: FillMode },
}

impl Mechanism {
    /// Array-Averaging with the minimax capacity and BestFit grouping.
    pub fn opt_array_averaging(fill: FillMode) -> Self {
        Mechanism::ArrayAveraging { m_ub: MubRule::Minimax, strategy: Strategy::BestFit, fill }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Baseline => "baseline",
            Mechanism::ArrayAveraging { m_ub: MubRule::Minimax, strategy: Strategy::BestFit, .. } => "opt-array-avg",
            Mechanism::ArrayAveraging { .. } => "array-avg",
            Mechanism::Levy { .. } => "levy",
            Mechanism::Quantile { variant: QuantileVariant::Fixed, .. } => "quantile-fixed",
            Mechanism::Quantile { variant: QuantileVariant::Optimized, .. } => "quantile-opt",
        }
    }

    /// Runs every data-dependent but noise-free step.
    pub fn prepare(&self, d: &HatDataset, epsilon: f64) -> Result<Prepared> {
        let budget = match self {
            Mechanism::Baseline | Mechanism::ArrayAveraging { .. } => PrivacyBudget::single(epsilon)?,
            Mechanism::Levy { .. } => PrivacyBudget::interval_then_mean(epsilon)?,
            Mechanism::Quantile { .. } => PrivacyBudget::two_quantiles_then_mean(epsilon)?,
        };
        let p = d.profile();
        let u = d.upper_bound();
        let stage = match *self {
            Mechanism::Baseline => Stage::Direct {
                statistic: d.true_mean(),
                sensitivity: sensitivity_baseline(&p, u),
                arrays: None,
            },
            Mechanism::ArrayAveraging { m_ub, strategy, fill } => {
                let m = m_ub.resolve(&p, u, epsilon)?;
                let g = grouping::group(d, m, strategy, fill)?;
                let means = grouping::array_means(&g);
                let statistic = means.iter().sum::<f64>() / means.len() as f64;
                let regime = (m_ub == MubRule::Minimax).then(|| selection::epsilon_boundaries(&p));
                Stage::Direct {
                    statistic,
                    sensitivity: sensitivity_array(&g, u),
                    arrays: Some(ArraySummary { m_ub: m, strategy, num_arrays: g.num_arrays(), regime }),
                }
            }
            Mechanism::Levy { gamma, fill } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::domain(format!("gamma must lie in (0, 1), got {gamma}")));
                }
                let (summary, means) = best_fit_means(d, &p, fill)?;
                // radius beyond U collapses to a single bin covering [0, U]
                let tau = quantiles::concentration_radius(u, summary.num_arrays, gamma, summary.m_ub).min(u);
                Stage::Projected { summary, means, range: RangeEstimator::Binned { tau } }
            }
            Mechanism::Quantile { variant, fill } => {
                let (summary, mut means) = best_fit_means(d, &p, fill)?;
                means.sort_by(f64::total_cmp);
                Stage::Projected { summary, means, range: RangeEstimator::Quantiles(variant) }
            }
        };
        Ok(Prepared { mechanism: *self, upper_bound: u, budget, stage })
    }

    /// Prepares and releases once with a stream seeded from `seed`.
    pub fn release(&self, d: &HatDataset, epsilon: f64, seed: u64) -> Result<MechanismReport> {
        let mut report = self.prepare(d, epsilon)?.release(&mut noise::seeded(seed))?;
        report.seed = Some(seed);
        Ok(report)
    }
}

fn best_fit_means(d: &HatDataset, p: &MultiplicityProfile, fill: FillMode) -> Result<(ArraySummary, Vec<f64>)> {
    let m = selection::sqrt_heuristic(p);
    let g = grouping::best_fit(d, m, fill)?;
    let summary = ArraySummary { m_ub: m, strategy: Strategy::BestFit, num_arrays: g.num_arrays(), regime: None };
    Ok((summary, grouping::array_means(&g)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ArraySummary {
    m_ub: usize,
    strategy: Strategy,
    num_arrays: usize,
    regime: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RangeEstimator {
    Binned { tau: f64 },
    Quantiles(QuantileVariant),
}

#[derive(Debug, Clone, PartialEq)]
enum Stage {
    /// Fixed statistic and sensitivity; only Laplace noise is random.
    Direct { statistic: f64, sensitivity: f64, arrays: Option<ArraySummary> },
    /// Array means projected into a privately estimated range.
    Projected { summary: ArraySummary, means: Vec<f64>, range: RangeEstimator },
}

/// A mechanism bound to a dataset and ε with all deterministic work done.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    mechanism: Mechanism,
    upper_bound: f64,
    budget: PrivacyBudget,
    stage: Stage,
}

impl Prepared {
    /// Expected absolute error of the noise alone when it does not depend on
    /// the random range stage; `None` for Levy and Quantile.
    pub fn analytic_noise_mae(&self) -> Option<f64> {
        match &self.stage {
            Stage::Direct { sensitivity, .. } => Some(sensitivity / self.budget.stage_epsilon(STAGE_MEAN)),
            Stage::Projected { .. } => None,
        }
    }

    pub fn mechanism(&self) -> Mechanism {
        self.mechanism
    }

    pub fn release(&self, rng: &mut DpRng) -> Result<MechanismReport> {
        let eps_mean = self.budget.stage_epsilon(STAGE_MEAN);
        let u = self.upper_bound;
        let mut warnings = Vec::new();
        let (statistic, sensitivity, arrays, interval) = match &self.stage {
            Stage::Direct { statistic, sensitivity, arrays } => (*statistic, *sensitivity, *arrays, None),
            Stage::Projected { summary, means, range } => {
                let est: IntervalEstimate = match range {
                    RangeEstimator::Binned { tau } => {
                        quantiles::private_interval(means, self.budget.stage_epsilon(STAGE_INTERVAL), *tau, u, rng)?
                    }
                    RangeEstimator::Quantiles(QuantileVariant::Fixed) => {
                        quantiles::fixed_quantile_interval(means, self.budget.stage_epsilon(STAGE_LOWER) * 2.0, u, rng)?
                    }
                    RangeEstimator::Quantiles(QuantileVariant::Optimized) => {
                        let stage = self.budget.stage_epsilon(STAGE_LOWER) * 2.0;
                        let (est, fell_back) =
                            quantiles::optimized_quantile_interval(means, self.budget.epsilon, stage, u, rng)?;
                        if fell_back {
                            let msg = format!(
                                "only {} arrays for epsilon {}; quantile ranks fell back to the extremes",
                                means.len(),
                                self.budget.epsilon
                            );
                            log::warn!("{msg}");
                            warnings.push(msg);
                        }
                        est
                    }
                };
                let k = means.len() as f64;
                let statistic = means.iter().map(|&x| est.project(x)).sum::<f64>() / k;
                (statistic, est.width() / k, Some(*summary), Some((est.lower, est.upper)))
            }
        };
        let noise_scale = sensitivity / eps_mean;
        let released = noise::laplace_mechanism(statistic, sensitivity, eps_mean, rng)?;
        Ok(MechanismReport {
            mechanism: self.mechanism.name().to_string(),
            released_mean: released,
            clipped_statistic: statistic,
            sensitivity,
            noise_scale,
            m_ub: arrays.map(|a| a.m_ub),
            strategy: arrays.map(|a| a.strategy),
            num_arrays: arrays.map(|a| a.num_arrays),
            budget: self.budget.clone(),
            interval,
            epsilon_regime: arrays.and_then(|a| a.regime),
            seed: None,
            warnings,
        })
    }
}

/// Noisy sample mean at sensitivity `U·m^*/Σ m_ℓ`.
pub fn release_baseline(d: &HatDataset, epsilon: f64, rng: &mut DpRng) -> Result<MechanismReport> {
    Mechanism::Baseline.prepare(d, epsilon)?.release(rng)
}

/// Noisy mean of array means.
pub fn release_array_averaging(
    d: &HatDataset,
    epsilon: f64,
    m_ub: usize,
    strategy: Strategy,
    fill: FillMode,
    rng: &mut DpRng,
) -> Result<MechanismReport> {
    Mechanism::ArrayAveraging { m_ub: MubRule::Fixed(m_ub), strategy, fill }
        .prepare(d, epsilon)?
        .release(rng)
}

/// Array means projected into the binned private interval.
pub fn release_levy(d: &HatDataset, epsilon: f64, gamma: f64, rng: &mut DpRng) -> Result<MechanismReport> {
    Mechanism::Levy { gamma, fill: FillMode::UserMean }.prepare(d, epsilon)?.release(rng)
}

/// Array means projected into a private interquantile interval.
pub fn release_quantile(
    d: &HatDataset,
    epsilon: f64,
    variant: QuantileVariant,
    rng: &mut DpRng,
) -> Result<MechanismReport> {
    Mechanism::Quantile { variant, fill: FillMode::UserMean }.prepare(d, epsilon)?.release(rng)
}
