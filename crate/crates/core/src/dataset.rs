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

//! Users, samples, and per-HAT datasets, with the exact (non-private)
//! statistics used as ground truth.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Summary constants of the bus-speed dataset the method was developed on.
/// The raw data is not public; these serve as fixtures and generator defaults.
pub mod itms {
    pub const USERS: usize = 217;
    pub const MAX_COUNT: usize = 417;
    pub const MIN_COUNT: usize = 1;
    pub const TOTAL_COUNT: usize = 17166;
    pub const MEDIAN_COUNT: usize = 46;
    pub const MEAN_SPEED: f64 = 20.66769;
    pub const SPEED_VARIANCE: f64 = 115.135;
    /// Arrays produced by WrapAround at the square-root heuristic capacity.
    pub const WRAP_ARRAYS: usize = 160;
    /// Arrays produced by BestFit at the square-root heuristic capacity.
    pub const BEST_FIT_ARRAYS: usize = 164;
    /// Speed bound in km/h.
    pub const UPPER_BOUND: f64 = 65.0;
}

/// Hexagon-and-timeslot bucket: an opaque region label and an hour index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HatKey {
    pub region: String,
    pub timeslot: i64,
}

impl HatKey {
    pub fn new(region: impl Into<String>, timeslot: i64) -> Self {
        HatKey { region: region.into(), timeslot }
    }
}

impl fmt::Display for HatKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.region, self.timeslot)
    }
}

/// One user's samples inside a HAT, in contribution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSeries {
    pub user_id: String,
    pub samples: Vec<f64>,
}

impl UserSeries {
    pub fn new(user_id: impl Into<String>, samples: Vec<f64>) -> Self {
        UserSeries { user_id: user_id.into(), samples }
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// All users of one HAT together with the public sample bound `U`.
///
/// Construction validates that every sample lies in `[0, U]`, that no user is
/// empty and that user ids are distinct; the value is immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HatDataset {
    key: HatKey,
    upper_bound: f64,
    users: Vec<UserSeries>,
}

impl HatDataset {
    pub fn new(key: HatKey, upper_bound: f64, users: Vec<UserSeries>) -> Result<Self> {
        if !(upper_bound.is_finite() && upper_bound > 0.0) {
            return Err(Error::domain(format!("upper bound must be positive, got {upper_bound}")));
        }
        if users.is_empty() {
            return Err(Error::domain("dataset has no users"));
        }
        let mut seen = HashSet::with_capacity(users.len());
        for user in &users {
            if user.samples.is_empty() {
                return Err(Error::domain(format!("user {} has no samples", user.user_id)));
            }
            if !seen.insert(user.user_id.as_str()) {
                return Err(Error::domain(format!("duplicate user id {}", user.user_id)));
            }
            if let Some(bad) = user
                .samples
                .iter()
                .find(|s| !(s.is_finite() && **s >= 0.0 && **s <= upper_bound))
            {
                return Err(Error::domain(format!(
                    "sample {bad} of user {} outside [0, {upper_bound}]",
                    user.user_id
                )));
            }
        }
        Ok(HatDataset { key, upper_bound, users })
    }

    pub fn key(&self) -> &HatKey {
        &self.key
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    pub fn users(&self) -> &[UserSeries] {
        &self.users
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_samples(&self) -> usize {
        self.users.iter().map(UserSeries::count).sum()
    }

    pub fn profile(&self) -> MultiplicityProfile {
        MultiplicityProfile::from_sorted_unchecked(self.users.iter().map(UserSeries::count).collect())
    }

    /// Exact sample mean over all samples of all users.
    pub fn true_mean(&self) -> f64 {
        let sum: f64 = self.users.iter().flat_map(|u| u.samples.iter()).sum();
        sum / self.num_samples() as f64
    }

    /// Population variance (divides by the total number of samples).
    pub fn sample_variance(&self) -> f64 {
        let mu = self.true_mean();
        let ss: f64 = self
            .users
            .iter()
            .flat_map(|u| u.samples.iter())
            .map(|s| (s - mu) * (s - mu))
            .sum();
        ss / self.num_samples() as f64
    }
}

/// The multiset of per-user sample counts, stored sorted non-increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiplicityProfile {
    counts: Vec<usize>,
    // prefix[k] = counts[0] + ... + counts[k-1]
    #[serde(skip)]
    prefix: Vec<usize>,
}

impl MultiplicityProfile {
    pub fn new(mut counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::domain("profile must contain at least one user"));
        }
        if counts.contains(&0) {
            return Err(Error::domain("sample counts must be positive"));
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        Ok(Self::build(counts))
    }

    // Callers guarantee non-empty, positive counts.
    pub(crate) fn from_sorted_unchecked(mut counts: Vec<usize>) -> Self {
        counts.sort_unstable_by(|a, b| b.cmp(a));
        Self::build(counts)
    }

    fn build(counts: Vec<usize>) -> Self {
        let mut prefix = Vec::with_capacity(counts.len() + 1);
        prefix.push(0);
        let mut acc = 0;
        for &c in &counts {
            acc += c;
            prefix.push(acc);
        }
        MultiplicityProfile { counts, prefix }
    }

    /// Counts in non-increasing order.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_users(&self) -> usize {
        self.counts.len()
    }

    /// Largest count, `m^*`.
    pub fn max_count(&self) -> usize {
        self.counts[0]
    }

    /// Smallest count, `m_*`.
    pub fn min_count(&self) -> usize {
        self.counts[self.counts.len() - 1]
    }

    pub fn total(&self) -> usize {
        self.prefix[self.counts.len()]
    }

    pub fn mean_count(&self) -> f64 {
        self.total() as f64 / self.num_users() as f64
    }

    /// `Σ_ℓ min{m_ℓ, m}`.
    pub fn clipped_total(&self, m: usize) -> usize {
        let above = self.count_above(m);
        above * m + (self.total() - self.prefix[above])
    }

    /// Number of users with strictly more than `m` samples.
    pub fn count_above(&self, m: usize) -> usize {
        self.counts.partition_point(|&c| c > m)
    }

    /// The `⌈L/2⌉`-th largest count. When the counts are distinct, exactly
    /// `⌈L/2⌉` users contribute at least this many samples.
    pub fn median(&self) -> usize {
        self.counts[self.counts.len().div_ceil(2) - 1]
    }

    /// Distinct counts in increasing order.
    pub fn distinct_counts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.counts.iter().rev().copied().collect();
        v.dedup();
        v
    }

    /// 1-based indexing into the non-increasing order, `m_k`.
    pub fn nth(&self, k: usize) -> usize {
        self.counts[k - 1]
    }
}
