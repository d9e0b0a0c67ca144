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

//! Pseudo-user construction: users' samples are clipped to at most `m_ub`
//! each and packed into arrays of capacity `m_ub`.
//!
//! Users are processed in non-increasing order of sample count; ties keep
//! dataset order. WrapAround fills arrays back to back and keeps only the
//! completely filled ones, so a user may straddle two arrays. BestFit places
//! each user whole into the fullest array that still has room (lowest index
//! on ties), so every user lands in exactly one array.

use std::cmp::Reverse;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::HatDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    WrapAround,
    BestFit,
}

/// What is written into an array slot for each retained sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillMode {
    /// The samples themselves.
    Raw,
    /// The contributing user's mean over all of their samples.
    #[default]
    UserMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoUserArray {
    pub capacity: usize,
    pub slots: Vec<f64>,
    /// `(user index, sample count)` in fill order; user indices refer to the dataset.
    pub contributors: Vec<(usize, usize)>,
}

impl PseudoUserArray {
    fn new(capacity: usize) -> Self {
        PseudoUserArray { capacity, slots: Vec::with_capacity(capacity), contributors: Vec::new() }
    }

    /// Filled slot count, `w(A)`.
    pub fn fill(&self) -> usize {
        self.slots.len()
    }

    pub fn room(&self) -> usize {
        self.capacity - self.slots.len()
    }

    pub fn mean(&self) -> f64 {
        self.slots.iter().sum::<f64>() / self.slots.len() as f64
    }

    fn push(&mut self, user: usize, values: &[f64]) {
        debug_assert!(values.len() <= self.room());
        self.slots.extend_from_slice(values);
        match self.contributors.last_mut() {
            Some((u, n)) if *u == user => *n += values.len(),
            _ => self.contributors.push((user, values.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupingResult {
    pub strategy: Strategy,
    pub m_ub: usize,
    pub arrays: Vec<PseudoUserArray>,
    /// For every dataset user, the indices of the arrays holding its samples.
    pub influence: Vec<Vec<usize>>,
    /// Samples lost beyond per-user clipping (WrapAround's trailing partial array).
    pub dropped_samples: usize,
    /// Samples removed by clipping each user to `m_ub`.
    pub clipped_samples: usize,
}

impl GroupingResult {
    pub fn num_arrays(&self) -> usize {
        self.arrays.len()
    }

    pub fn filled_total(&self) -> usize {
        self.arrays.iter().map(PseudoUserArray::fill).sum()
    }
}

/// Per-user slot values, in dataset order.
pub fn fill_values(d: &HatDataset, mode: FillMode) -> Vec<Vec<f64>> {
    d.users()
        .iter()
        .map(|u| match mode {
            FillMode::Raw => u.samples.clone(),
            FillMode::UserMean => vec![u.mean(); u.count()],
        })
        .collect()
}

/// Dataset user indices sorted by non-increasing sample count, stable on ties.
pub fn processing_order(d: &HatDataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d.num_users()).collect();
    order.sort_by_key(|&i| Reverse(d.users()[i].count()));
    order
}

fn check_capacity(m_ub: usize) -> Result<()> {
    if m_ub == 0 {
        return Err(Error::domain("array capacity m_ub must be positive"));
    }
    Ok(())
}

pub fn group(d: &HatDataset, m_ub: usize, strategy: Strategy, fill: FillMode) -> Result<GroupingResult> {
    match strategy {
        Strategy::WrapAround => wrap_around(d, m_ub, fill),
        Strategy::BestFit => best_fit(d, m_ub, fill),
    }
}

/// WrapAround grouping. Returns exactly `⌊Σ min{m_ℓ, m_ub} / m_ub⌋` full arrays.
pub fn wrap_around(d: &HatDataset, m_ub: usize, fill: FillMode) -> Result<GroupingResult> {
    check_capacity(m_ub)?;
    let values = fill_values(d, fill);
    let clipped_total = d.profile().clipped_total(m_ub);
    let full = clipped_total / m_ub;
    if full == 0 {
        return Err(Error::InsufficientData { clipped: clipped_total, m_ub });
    }

    let mut arrays: Vec<PseudoUserArray> = Vec::with_capacity(full);
    let mut influence = vec![Vec::new(); d.num_users()];
    let mut dropped = 0;
    let mut clipped = 0;
    for user in processing_order(d) {
        let take = values[user].len().min(m_ub);
        clipped += values[user].len() - take;
        let mut rest = &values[user][..take];
        while !rest.is_empty() {
            if arrays.last().is_none_or(|a| a.room() == 0) {
                if arrays.len() == full {
                    dropped += rest.len();
                    break;
                }
                arrays.push(PseudoUserArray::new(m_ub));
            }
            let idx = arrays.len() - 1;
            let n = rest.len().min(arrays[idx].room());
            arrays[idx].push(user, &rest[..n]);
            influence[user].push(idx);
            rest = &rest[n..];
        }
        assert!(influence[user].len() <= 2, "a clipped user spans more than two arrays");
    }
    // the last kept array can only be partial if the drop happened mid-array
    debug_assert!(arrays.iter().all(|a| a.room() == 0));
    Ok(GroupingResult {
        strategy: Strategy::WrapAround,
        m_ub,
        arrays,
        influence,
        dropped_samples: dropped,
        clipped_samples: clipped,
    })
}

/// BestFit grouping. Every user with data lands in exactly one array.
pub fn best_fit(d: &HatDataset, m_ub: usize, fill: FillMode) -> Result<GroupingResult> {
    check_capacity(m_ub)?;
    let values = fill_values(d, fill);
    let mut arrays: Vec<PseudoUserArray> = Vec::new();
    // (fill, Reverse(index)) of every open array, so the last element at or
    // below a fill level is the fullest such array with the lowest index.
    let mut open: BTreeSet<(usize, Reverse<usize>)> = BTreeSet::new();
    let mut influence = vec![Vec::new(); d.num_users()];
    let mut clipped = 0;

    for user in processing_order(d) {
        let take = values[user].len().min(m_ub);
        clipped += values[user].len() - take;
        let limit = m_ub - take;
        let chosen = open.range(..=(limit, Reverse(0))).next_back().copied();
        let idx = match chosen {
            Some(entry) => {
                open.remove(&entry);
                entry.1 .0
            }
            None => {
                arrays.push(PseudoUserArray::new(m_ub));
                arrays.len() - 1
            }
        };
        arrays[idx].push(user, &values[user][..take]);
        influence[user].push(idx);
        open.insert((arrays[idx].fill(), Reverse(idx)));
    }
    Ok(GroupingResult {
        strategy: Strategy::BestFit,
        m_ub,
        arrays,
        influence,
        dropped_samples: 0,
        clipped_samples: clipped,
    })
}

/// Mean of each array, in array order.
pub fn array_means(g: &GroupingResult) -> Vec<f64> {
    g.arrays.iter().map(PseudoUserArray::mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{HatKey, UserSeries};

    fn dataset(counts: &[usize]) -> HatDataset {
        let users = counts
            .iter()
            .enumerate()
            .map(|(i, &m)| UserSeries::new(format!("u{i}"), (0..m).map(|j| (10 * i + j) as f64).collect()))
            .collect();
        HatDataset::new(HatKey::new("r", 0), 65.0, users).unwrap()
    }

    fn fills(g: &GroupingResult) -> Vec<Vec<usize>> {
        g.arrays.iter().map(|a| a.contributors.iter().map(|c| c.1).collect()).collect()
    }

    #[test]
    fn user_mean_fill() {
        let d = HatDataset::new(
            HatKey::new("r", 0),
            65.0,
            vec![UserSeries::new("a", vec![10.0, 20.0]), UserSeries::new("b", vec![42.0])],
        )
        .unwrap();
        assert_eq!(fill_values(&d, FillMode::UserMean), vec![vec![15.0, 15.0], vec![42.0]]);
        assert_eq!(fill_values(&d, FillMode::Raw), vec![vec![10.0, 20.0], vec![42.0]]);
    }

    #[test]
    fn wrap_around_532() {
        let g = wrap_around(&dataset(&[5, 3, 2]), 3, FillMode::Raw).unwrap();
        assert_eq!(g.num_arrays(), 2);
        assert_eq!(fills(&g), vec![vec![3], vec![3]]);
        // user 2 (count 2) would start array 3, which is never completed
        assert_eq!(g.dropped_samples, 2);
        assert_eq!(g.clipped_samples, 2);
        assert!(g.influence[2].is_empty());
        assert_eq!(g.filled_total() + g.dropped_samples, 8);
    }

    #[test]
    fn wrap_around_straddles() {
        let g = wrap_around(&dataset(&[3, 2, 2, 2]), 3, FillMode::Raw).unwrap();
        assert_eq!(g.num_arrays(), 3);
        assert_eq!(fills(&g), vec![vec![3], vec![2, 1], vec![1, 2]]);
        assert_eq!(g.influence[2], vec![1, 2]);
        assert_eq!(g.arrays[1].slots, vec![10.0, 11.0, 20.0]);
        assert_eq!(g.arrays[2].slots, vec![21.0, 30.0, 31.0]);
    }

    #[test]
    fn wrap_around_exact_and_single() {
        let g = wrap_around(&dataset(&[4, 4, 4]), 4, FillMode::Raw).unwrap();
        assert_eq!(g.num_arrays(), 3);
        assert_eq!(g.influence, vec![vec![0], vec![1], vec![2]]);
        let g = wrap_around(&dataset(&[6]), 6, FillMode::Raw).unwrap();
        assert_eq!(g.num_arrays(), 1);
        assert_eq!(g.arrays[0].slots, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn wrap_around_insufficient() {
        assert!(matches!(
            wrap_around(&dataset(&[1, 1]), 3, FillMode::Raw),
            Err(Error::InsufficientData { clipped: 2, m_ub: 3 })
        ));
        assert!(wrap_around(&dataset(&[1]), 0, FillMode::Raw).is_err());
    }

    #[test]
    fn best_fit_322() {
        let g = best_fit(&dataset(&[3, 2, 2]), 4, FillMode::Raw).unwrap();
        assert_eq!(fills(&g), vec![vec![3], vec![2, 2]]);
        assert_eq!(wrap_around(&dataset(&[3, 2, 2]), 4, FillMode::Raw).unwrap().num_arrays(), 1);
    }

    #[test]
    fn best_fit_41111() {
        let g = best_fit(&dataset(&[4, 1, 1, 1, 1]), 4, FillMode::Raw).unwrap();
        assert_eq!(fills(&g), vec![vec![4], vec![1, 1, 1, 1]]);
    }

    #[test]
    fn best_fit_prefers_fullest_then_lowest_index() {
        // capacity 5: [3] [3] then a 2 goes to array 0, next 2 to array 1
        let g = best_fit(&dataset(&[3, 3, 2, 2, 1]), 5, FillMode::Raw).unwrap();
        assert_eq!(fills(&g), vec![vec![3, 2], vec![3, 2], vec![1]]);
        // capacity 6: [4] [3]; a 2 fits both, fullest is array 0
        let g = best_fit(&dataset(&[4, 3, 2]), 6, FillMode::Raw).unwrap();
        assert_eq!(fills(&g), vec![vec![4, 2], vec![3]]);
    }

    #[test]
    fn best_fit_exact_fit_and_stable_ties() {
        let g = best_fit(&dataset(&[2, 2, 2]), 2, FillMode::Raw).unwrap();
        assert_eq!(g.influence, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn processing_order_is_stable() {
        let d = dataset(&[1, 3, 1, 3]);
        assert_eq!(processing_order(&d), vec![1, 3, 0, 2]);
    }

    #[test]
    fn means() {
        let d = HatDataset::new(
            HatKey::new("r", 0),
            65.0,
            vec![UserSeries::new("a", vec![10.0, 20.0]), UserSeries::new("b", vec![65.0; 3])],
        )
        .unwrap();
        let g = best_fit(&d, 3, FillMode::Raw).unwrap();
        assert_eq!(array_means(&g), vec![65.0, 15.0]);
    }
}
