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

//! Synthetic datasets: i.i.d. Gaussian speeds clamped to `[0, U]`, laid out
//! over a (possibly scaled) multiplicity profile.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{itms, HatDataset, HatKey, MultiplicityProfile, UserSeries};
use crate::error::{Error, Result};
use crate::ingest::{RawRecord, SECONDS_PER_SLOT};
use crate::noise::DpRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "factor")]
pub enum Scaling {
    #[default]
    None,
    /// Every user contributes `λ` times as many samples.
    Sample(usize),
    /// Every user is replicated `λ` times.
    User(usize),
}

impl Scaling {
    pub fn factor(&self) -> usize {
        match *self {
            Scaling::None => 1,
            Scaling::Sample(l) | Scaling::User(l) => l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorSpec {
    pub mu: f64,
    pub sigma2: f64,
    pub upper_bound: f64,
    pub base_profile: MultiplicityProfile,
    pub scaling: Scaling,
    pub seed: u64,
    pub key: HatKey,
}

impl GeneratorSpec {
    /// Gaussian parameters and bound of the reference bus-speed data.
    pub fn itms_like(base_profile: MultiplicityProfile, scaling: Scaling, seed: u64) -> Self {
        GeneratorSpec {
            mu: itms::MEAN_SPEED,
            sigma2: itms::SPEED_VARIANCE,
            upper_bound: itms::UPPER_BOUND,
            base_profile,
            scaling,
            seed,
            key: HatKey::new("synthetic", 0),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.upper_bound > 0.0 && self.upper_bound.is_finite()) {
            return Err(Error::domain(format!("upper bound must be positive, got {}", self.upper_bound)));
        }
        if !self.mu.is_finite() {
            return Err(Error::domain("mu must be finite"));
        }
        if self.scaling.factor() == 0 {
            return Err(Error::domain("scaling factor must be a positive integer"));
        }
        Ok(())
    }
}

/// `count` draws of `min(U, max(0, X))` with `X ~ N(μ, σ²)`.
pub fn sample_projected_gaussian<R: Rng + ?Sized>(
    mu: f64,
    sigma2: f64,
    upper_bound: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let normal = Normal::new(mu, sigma2.sqrt()).map_err(|e| Error::domain(e.to_string()))?;
    Ok((0..count).map(|_| normal.sample(rng).clamp(0.0, upper_bound)).collect())
}

pub fn scale_profile(p: &MultiplicityProfile, scaling: Scaling) -> Result<MultiplicityProfile> {
    let counts = match scaling {
        Scaling::None => p.counts().to_vec(),
        Scaling::Sample(l) => p.counts().iter().map(|m| m * l).collect(),
        Scaling::User(l) => p.counts().iter().flat_map(|&m| std::iter::repeat_n(m, l)).collect(),
    };
    MultiplicityProfile::new(counts)
}

/// Builds users along the scaled profile and fills each with i.i.d.
/// projected-Gaussian samples. User `i` draws from stream `i` of the seeded
/// generator, so the output does not depend on thread scheduling.
pub fn generate_dataset(spec: &GeneratorSpec) -> Result<HatDataset> {
    spec.validate()?;
    let profile = scale_profile(&spec.base_profile, spec.scaling)?;
    let width = profile.num_users().to_string().len();
    let users: Result<Vec<UserSeries>> = profile
        .counts()
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = DpRng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let samples = sample_projected_gaussian(spec.mu, spec.sigma2, spec.upper_bound, m, &mut rng)?;
            Ok(UserSeries::new(format!("u{i:0width$}"), samples))
        })
        .collect();
    HatDataset::new(spec.key.clone(), spec.upper_bound, users?)
}

/// A 217-user profile shaped like the reference data: log-normal counts
/// with median near 46, clamped to `[1, 417]`, with both extremes present.
pub fn itms_like_profile(seed: u64) -> MultiplicityProfile {
    let mut rng = DpRng::seed_from_u64(seed);
    let dist = LogNormal::new((itms::MEDIAN_COUNT as f64).ln(), 1.0).expect("valid log-normal");
    let mut counts: Vec<usize> = (0..itms::USERS)
        .map(|_| (dist.sample(&mut rng).round() as usize).clamp(itms::MIN_COUNT, itms::MAX_COUNT))
        .collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts[0] = itms::MAX_COUNT;
    *counts.last_mut().expect("non-empty") = itms::MIN_COUNT;
    MultiplicityProfile::new(counts).expect("positive counts")
}

/// Flattens a dataset into ingestion records. Sample `j` of a user gets the
/// timestamp `slot·3600 + (j mod 3600)` so every record buckets back into the
/// dataset's HAT.
pub fn dataset_records(d: &HatDataset) -> Vec<RawRecord> {
    let base = d.key().timeslot * SECONDS_PER_SLOT;
    d.users()
        .iter()
        .flat_map(|u| {
            u.samples.iter().enumerate().map(move |(j, &s)| RawRecord {
                user_id: u.user_id.clone(),
                region_key: d.key().region.clone(),
                timestamp: base + (j as i64 % SECONDS_PER_SLOT),
                speed: s,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::seeded;

    fn prof(c: &[usize]) -> MultiplicityProfile {
        MultiplicityProfile::new(c.to_vec()).unwrap()
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(scale_profile(&prof(&[4, 2]), Scaling::Sample(10)).unwrap().counts(), &[40, 20]);
        assert_eq!(scale_profile(&prof(&[4, 2]), Scaling::User(2)).unwrap().counts(), &[4, 4, 2, 2]);
        assert_eq!(scale_profile(&prof(&[4, 2]), Scaling::Sample(1)).unwrap(), prof(&[4, 2]));
        assert_eq!(scale_profile(&prof(&[4, 2]), Scaling::None).unwrap(), prof(&[4, 2]));
    }

    #[test]
    fn degenerate_gaussian() {
        let v = sample_projected_gaussian(32.5, 1e-18, 65.0, 100, &mut seeded(1)).unwrap();
        assert!(v.iter().all(|x| (x - 32.5).abs() < 1e-6));
        assert!(sample_projected_gaussian(1.0, 1.0, 2.0, 0, &mut seeded(1)).unwrap().is_empty());
    }

    #[test]
    fn values_are_clamped() {
        let v = sample_projected_gaussian(0.0, 400.0, 10.0, 5000, &mut seeded(4)).unwrap();
        assert!(v.iter().all(|x| (0.0..=10.0).contains(x)));
        assert!(v.contains(&0.0) && v.contains(&10.0));
    }

    #[test]
    fn generated_structure_and_determinism() {
        let spec = GeneratorSpec::itms_like(prof(&[5, 3, 1]), Scaling::User(2), 77);
        let a = generate_dataset(&spec).unwrap();
        let b = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.profile().counts(), &[5, 5, 3, 3, 1, 1]);
        let other = generate_dataset(&GeneratorSpec { seed: 78, ..spec.clone() }).unwrap();
        assert_ne!(a, other);
        let mut bad = spec;
        bad.sigma2 = 0.0;
        assert!(generate_dataset(&bad).is_err());
    }

    #[test]
    fn reference_shaped_profile() {
        let p = itms_like_profile(2024);
        assert_eq!(p.num_users(), itms::USERS);
        assert_eq!(p.max_count(), itms::MAX_COUNT);
        assert_eq!(p.min_count(), itms::MIN_COUNT);
        assert!((30..=65).contains(&p.median()), "median {}", p.median());
    }

    #[test]
    fn records_bucket_back() {
        let mut spec = GeneratorSpec::itms_like(prof(&[4000, 2]), Scaling::None, 1);
        spec.key = HatKey::new("hex", 7);
        let d = generate_dataset(&spec).unwrap();
        let recs = dataset_records(&d);
        assert_eq!(recs.len(), 4002);
        let out = crate::ingest::bucket_into_hats(&recs, 65.0, false).unwrap();
        assert_eq!(out.hats.len(), 1);
        assert_eq!(out.hats[&spec.key], d);
    }
}
