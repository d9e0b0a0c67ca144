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

//! Monte-Carlo MAE evaluation, ε sweeps and minimax-curve export.

use std::io::{Read, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{HatDataset, MultiplicityProfile};
use crate::error::{Error, Result};
use crate::grouping::{FillMode, Strategy};
use crate::mechanisms::{Mechanism, MubRule, QuantileVariant, DEFAULT_GAMMA};
use crate::noise::{seeded, trial_seed};
use crate::selection::MinimaxCurve;
use crate::synth::{self, GeneratorSpec, Scaling};

pub const DEFAULT_TRIALS: usize = 10_000;
pub const PRESET_EPSILONS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
pub const PRESET_SCALE: usize = 10;

/// A mechanism by name plus optional parameters, as written in sweep configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_ub: Option<MubRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<FillMode>,
    /// Row label; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl MechanismSpec {
    pub fn named(name: &str) -> Self {
        MechanismSpec { name: name.to_string(), m_ub: None, strategy: None, gamma: None, fill: None, label: None }
    }

    pub fn with_m_ub(mut self, rule: MubRule) -> Self {
        self.m_ub = Some(rule);
        self
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    pub fn to_mechanism(&self) -> Result<Mechanism> {
        let fill = self.fill.unwrap_or_default();
        let array_only = |what: &str| Error::Config(format!("`{what}` does not apply to mechanism `{}`", self.name));
        let mech = match self.name.as_str() {
            "baseline" => Mechanism::Baseline,
            "array-avg" => Mechanism::ArrayAveraging {
                m_ub: self.m_ub.unwrap_or(MubRule::Median),
                strategy: self.strategy.unwrap_or(Strategy::BestFit),
                fill,
            },
            "opt-array-avg" => {
                if self.m_ub.is_some_and(|r| r != MubRule::Minimax) {
                    return Err(array_only("m_ub"));
                }
                Mechanism::ArrayAveraging {
                    m_ub: MubRule::Minimax,
                    strategy: self.strategy.unwrap_or(Strategy::BestFit),
                    fill,
                }
            }
            "levy" => Mechanism::Levy { gamma: self.gamma.unwrap_or(DEFAULT_GAMMA), fill },
            "quantile-fixed" => Mechanism::Quantile { variant: QuantileVariant::Fixed, fill },
            "quantile-opt" => Mechanism::Quantile { variant: QuantileVariant::Optimized, fill },
            other => return Err(Error::Config(format!("unknown mechanism `{other}`"))),
        };
        let is_array = matches!(mech, Mechanism::ArrayAveraging { .. });
        if self.m_ub.is_some() && !is_array {
            return Err(array_only("m_ub"));
        }
        if self.strategy.is_some() && !is_array {
            return Err(array_only("strategy"));
        }
        if self.gamma.is_some() && !matches!(mech, Mechanism::Levy { .. }) {
            return Err(array_only("gamma"));
        }
        Ok(mech)
    }
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mechanisms: Vec<MechanismSpec>,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.mechanisms.is_empty() || self.epsilons.is_empty() {
            return Err(Error::Config("need at least one mechanism and one epsilon".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("epsilon {e} must be positive and finite")));
        }
        for m in &self.mechanisms {
            m.to_mechanism()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset: String,
    pub mechanism: String,
    pub epsilon: f64,
    pub mae: f64,
    pub std_error: f64,
    pub trials: usize,
    /// True when `mae` is the closed form `Δ/ε` rather than a sample average.
    pub analytic: bool,
}

/// Mean absolute error of `mechanism` against the true mean. Baseline uses
/// the closed form `Δ_f/ε`; everything else averages `trials` releases with
/// seeds `base_seed + i`. Trials run in parallel and reduce in index order.
pub fn evaluate_mae(
    d: &HatDataset,
    mechanism: &Mechanism,
    epsilon: f64,
    trials: usize,
    base_seed: u64,
) -> Result<SweepRow> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let prepared = mechanism.prepare(d, epsilon)?;
    let row = |mae, std_error, analytic| SweepRow {
        dataset: d.key().to_string(),
        mechanism: mechanism.name().to_string(),
        epsilon,
        mae,
        std_error,
        trials,
        analytic,
    };
    if *mechanism == Mechanism::Baseline {
        let mae = prepared.analytic_noise_mae().expect("baseline noise is data independent");
        return Ok(row(mae, 0.0, true));
    }
    let truth = d.true_mean();
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            prepared
                .release(&mut seeded(trial_seed(base_seed, i)))
                .map(|r| (r.released_mean - truth).abs())
                .map_err(|e| Error::Trial { trial: i, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let (mae, se) = mean_and_std_error(&errors);
    Ok(row(mae, se, false))
}

/// Sample mean and its standard error `s/√n` (zero for a single value).
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A dataset with the label it is reported under.
#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub label: String,
    pub data: HatDataset,
}

/// Every dataset × mechanism × ε, in that nesting order.
pub fn run_sweep(config: &SweepConfig, datasets: &[NamedDataset]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut rows = Vec::with_capacity(datasets.len() * config.mechanisms.len() * config.epsilons.len());
    for ds in datasets {
        for spec in &config.mechanisms {
            let mech = spec.to_mechanism()?;
            for &eps in &config.epsilons {
                let mut row = evaluate_mae(&ds.data, &mech, eps, config.trials, config.base_seed)?;
                row.dataset = ds.label.clone();
                row.mechanism = spec.label().to_string();
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(sink: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(source: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(source);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct MinimaxRow {
    epsilon: f64,
    m_ub: usize,
    error_over_u: f64,
}

/// Writes `epsilon,m_ub,error_over_u` rows.
pub fn export_minimax<W: Write>(curve: &MinimaxCurve, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for i in 0..curve.len() {
        w.serialize(MinimaxRow {
            epsilon: curve.epsilons[i],
            m_ub: curve.capacities[i],
            error_over_u: curve.errors[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_minimax<R: Read>(source: R) -> Result<MinimaxCurve> {
    let mut curve = MinimaxCurve { epsilons: Vec::new(), capacities: Vec::new(), errors: Vec::new() };
    let mut r = csv::Reader::from_reader(source);
    for row in r.deserialize() {
        let row: MinimaxRow = row?;
        curve.epsilons.push(row.epsilon);
        curve.capacities.push(row.m_ub);
        curve.errors.push(row.error_over_u);
    }
    Ok(curve)
}

/// Canned reproduction setups on synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Every user of the reference-shaped profile contributes 10× the samples.
    SampleScaling,
    /// Every user of the reference-shaped profile is replicated 10×.
    UserScaling,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample-scaling" => Ok(Preset::SampleScaling),
            "user-scaling" => Ok(Preset::UserScaling),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::SampleScaling => "sample-scaling",
            Preset::UserScaling => "user-scaling",
        }
    }

    pub fn scaling(&self) -> Scaling {
        match self {
            Preset::SampleScaling => Scaling::Sample(PRESET_SCALE),
            Preset::UserScaling => Scaling::User(PRESET_SCALE),
        }
    }

    pub fn generator(&self, base: MultiplicityProfile, seed: u64) -> GeneratorSpec {
        let mut spec = GeneratorSpec::itms_like(base, self.scaling(), seed);
        spec.key.region = self.name().to_string();
        spec
    }

    pub fn dataset(&self, seed: u64) -> Result<NamedDataset> {
        let spec = self.generator(synth::itms_like_profile(seed), seed);
        Ok(NamedDataset { label: self.name().to_string(), data: synth::generate_dataset(&spec)? })
    }

    /// Baseline, Array-Averaging, Levy and both Quantile variants. Under
    /// sample scaling Array-Averaging uses the median capacity; under user
    /// scaling it uses the square-root heuristic like the others.
    pub fn mechanisms(&self) -> Vec<MechanismSpec> {
        let array_rule = match self {
            Preset::SampleScaling => MubRule::Median,
            Preset::UserScaling => MubRule::Sqrt,
        };
        vec![
            MechanismSpec::named("baseline"),
            MechanismSpec::named("array-avg").with_m_ub(array_rule),
            MechanismSpec::named("levy"),
            MechanismSpec::named("quantile-fixed"),
            MechanismSpec::named("quantile-opt"),
        ]
    }

    pub fn config(&self, trials: usize, base_seed: u64) -> SweepConfig {
        SweepConfig {
            mechanisms: self.mechanisms(),
            epsilons: PRESET_EPSILONS.to_vec(),
            trials,
            base_seed,
            output: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{itms, HatKey, UserSeries};
    use crate::mechanisms::baseline_sensitivity;

    fn constant(counts: &[usize], c: f64) -> HatDataset {
        let users = counts.iter().enumerate().map(|(i, &m)| UserSeries::new(format!("u{i}"), vec![c; m])).collect();
        HatDataset::new(HatKey::new("r", 0), 65.0, users).unwrap()
    }

    #[test]
    fn baseline_is_analytic() {
        let d = constant(&[4, 2, 2], 30.0);
        let row = evaluate_mae(&d, &Mechanism::Baseline, 0.5, 10, 0).unwrap();
        assert!(row.analytic);
        assert_eq!(row.mae, baseline_sensitivity(65.0, 4, 8) / 0.5);
        assert_eq!(row.std_error, 0.0);
        let s = baseline_sensitivity(itms::UPPER_BOUND, itms::MAX_COUNT, itms::TOTAL_COUNT);
        assert!((s - 1.5790).abs() < 1e-4);
    }

    #[test]
    fn array_avg_constant_data_mae_matches_laplace() {
        let d = constant(&[3, 3, 3, 3, 3, 3, 3, 3], 40.0);
        let mech = Mechanism::ArrayAveraging { m_ub: MubRule::Median, strategy: Strategy::BestFit, fill: FillMode::Raw };
        let row = evaluate_mae(&d, &mech, 1.0, 20_000, 3).unwrap();
        let expected = 65.0 / 8.0;
        assert!((row.mae - expected).abs() < 4.0 * row.std_error, "{row:?}");
    }

    #[test]
    fn single_trial_reproducible() {
        let d = constant(&[5, 2, 1], 12.0);
        let mech = Mechanism::Levy { gamma: 0.2, fill: FillMode::UserMean };
        let a = evaluate_mae(&d, &mech, 1.0, 1, 99).unwrap();
        let b = evaluate_mae(&d, &mech, 1.0, 1, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.std_error, 0.0);
        assert!(evaluate_mae(&d, &mech, 1.0, 0, 99).is_err());
    }

    #[test]
    fn trial_failures_carry_index() {
        let d = constant(&[5, 2, 1], 12.0);
        let mech = Mechanism::Levy { gamma: 2.0, fill: FillMode::UserMean };
        // gamma is rejected during preparation, before any trial
        assert!(matches!(evaluate_mae(&d, &mech, 1.0, 3, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn sweep_cardinality_and_csv() {
        let d = NamedDataset { label: "c".into(), data: constant(&[6, 4, 3, 3, 2], 20.0) };
        let cfg = SweepConfig {
            mechanisms: ["baseline", "array-avg", "levy", "quantile-fixed"].iter().map(|n| MechanismSpec::named(n)).collect(),
            epsilons: PRESET_EPSILONS.to_vec(),
            trials: 50,
            base_seed: 1,
            output: None,
        };
        let rows = run_sweep(&cfg, std::slice::from_ref(&d)).unwrap();
        assert_eq!(rows.len(), 16);
        assert_eq!(rows[4].mechanism, "array-avg");
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
        let mut again = Vec::new();
        write_rows(&mut again, &run_sweep(&cfg, &[d]).unwrap()).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn config_parsing() {
        let cfg = SweepConfig::from_json(
            r#"{"mechanisms":[{"name":"array-avg","m_ub":"sqrt","strategy":"wrap-around"},{"name":"levy","gamma":0.3}],
                "epsilons":[0.5,1.0],"base_seed":4}"#,
        )
        .unwrap();
        assert_eq!(cfg.trials, DEFAULT_TRIALS);
        assert_eq!(
            cfg.mechanisms[0].to_mechanism().unwrap(),
            Mechanism::ArrayAveraging { m_ub: MubRule::Sqrt, strategy: Strategy::WrapAround, fill: FillMode::UserMean }
        );
        assert!(SweepConfig::from_json(r#"{"mechanisms":[{"name":"nope"}],"epsilons":[1]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"mechanisms":[{"name":"levy"}],"epsilons":[0]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"mechanisms":[{"name":"levy","m_ub":"7"}],"epsilons":[1]}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"mechanisms":[{"name":"levy"}],"epsilons":[1],"trials":0}"#).is_err());
        assert!(SweepConfig::from_json(r#"{"mechanisms":[],"epsilons":[1]}"#).is_err());
    }

    #[test]
    fn minimax_csv_round_trip() {
        let p = MultiplicityProfile::new(vec![9, 4, 2, 1]).unwrap();
        let curve = crate::selection::minimax_curve(&p, 65.0, &[0.001, 0.5, 2.0]).unwrap();
        let mut buf = Vec::new();
        export_minimax(&curve, &mut buf).unwrap();
        assert!(std::str::from_utf8(&buf).unwrap().starts_with("epsilon,m_ub,error_over_u\n"));
        assert_eq!(read_minimax(buf.as_slice()).unwrap(), curve);
    }
}
