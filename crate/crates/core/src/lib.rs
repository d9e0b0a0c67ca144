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

//! Release of user-level differentially private sample means for datasets in
//! which every user contributes a variable number of bounded samples.
//!
//! Samples are grouped into fixed-capacity pseudo-user arrays so that the
//! per-user sensitivity no longer scales with the largest contributor, then
//! released through one of several Laplace-based mechanisms:
//!
//! * [`mechanisms::Mechanism::Baseline`]: noisy sample mean.
//! * [`mechanisms::Mechanism::ArrayAveraging`]: noisy mean of array means.
//! * [`mechanisms::Mechanism::Levy`]: array means projected into a privately
//!   estimated concentration interval.
//! * [`mechanisms::Mechanism::Quantile`]: array means projected into a privately
//!   estimated interquantile interval.
//!
//! The [`selection`] module chooses the array capacity `m_ub`, including the
//! worst-case (minimax) optimal choice and its convex relaxation.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod ingest;
pub mod mechanisms;
pub mod noise;
pub mod quantiles;
pub mod selection;
pub mod synth;

pub use dataset::{HatDataset, HatKey, MultiplicityProfile, UserSeries};
pub use error::{Error, Result};
pub use grouping::{FillMode, GroupingResult, PseudoUserArray, Strategy};
pub use mechanisms::{Mechanism, MechanismReport, MubRule, PrivacyBudget, QuantileVariant};
pub use noise::DpRng;
