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

//! `hatdp` command line: ingest, synthesize, release, sweep and capacity selection.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hatdp::eval::{self, MechanismSpec, NamedDataset, Preset, SweepConfig};
use hatdp::ingest::{self, Bucketed, RecordFormat};
use hatdp::selection;
use hatdp::synth::{self, GeneratorSpec, Scaling};
use hatdp::{Error, FillMode, HatDataset, HatKey, MubRule, MultiplicityProfile, Result, Strategy};

#[derive(Debug, Parser)]
#[command(name = "hatdp", version, about = "User-level differentially private means per hexagon and timeslot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a record CSV and summarize the HATs it contains.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate projected-Gaussian records in the ingestion CSV format.
    Synth(SynthArgs),
    /// Release one private mean.
    Release(ReleaseArgs),
    /// Monte-Carlo MAE over mechanisms × ε, as CSV.
    Sweep(SweepArgs),
    /// Minimax capacity curve (CSV) or, with `--epsilon`, every capacity rule at one ε (JSON).
    OptM(OptMArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Record CSV with columns user_id,region_key,timestamp,speed.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 65.0)]
    upper_bound: f64,
    /// Keep zero-speed samples.
    #[arg(long)]
    keep_zeros: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Debug, Args)]
struct HatArg {
    /// HAT to use, as `region:timeslot`; optional when the input has one HAT.
    #[arg(long)]
    hat: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScalingKind {
    None,
    Sample,
    User,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Comma-separated per-user sample counts; defaults to a 217-user reference-shaped profile.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, value_enum, default_value_t = ScalingKind::None)]
    scaling: ScalingKind,
    #[arg(long, default_value_t = eval::PRESET_SCALE)]
    lambda: usize,
    #[arg(long, default_value_t = hatdp::dataset::itms::MEAN_SPEED)]
    mu: f64,
    #[arg(long, default_value_t = hatdp::dataset::itms::SPEED_VARIANCE)]
    sigma2: f64,
    #[arg(long, default_value_t = 65.0)]
    upper_bound: f64,
    #[arg(long, default_value = "synthetic")]
    region: String,
    #[arg(long, default_value_t = 0)]
    timeslot: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum MechanismName {
    Baseline,
    ArrayAvg,
    Levy,
    QuantileFixed,
    QuantileOpt,
    OptArrayAvg,
}

impl MechanismName {
    fn as_str(self) -> &'static str {
        match self {
            MechanismName::Baseline => "baseline",
            MechanismName::ArrayAvg => "array-avg",
            MechanismName::Levy => "levy",
            MechanismName::QuantileFixed => "quantile-fixed",
            MechanismName::QuantileOpt => "quantile-opt",
            MechanismName::OptArrayAvg => "opt-array-avg",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Wraparound,
    Bestfit,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Wraparound => Strategy::WrapAround,
            StrategyArg::Bestfit => Strategy::BestFit,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FillArg {
    Raw,
    UserMean,
}

impl From<FillArg> for FillMode {
    fn from(f: FillArg) -> Self {
        match f {
            FillArg::Raw => FillMode::Raw,
            FillArg::UserMean => FillMode::UserMean,
        }
    }
}

#[derive(Debug, Args)]
struct ReleaseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    hat: HatArg,
    #[arg(long, value_enum)]
    mechanism: MechanismName,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// median, sqrt, minimax, relaxed or a positive integer.
    #[arg(long, value_parser = parse_rule)]
    m_ub: Option<MubRule>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    fill: Option<FillArg>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON file mirroring the sweep configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset, conflicts_with = "input")]
    preset: Option<Preset>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 65.0)]
    upper_bound: f64,
    #[arg(long)]
    keep_zeros: bool,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[command(flatten)]
    hat: HatArg,
    #[arg(long, value_enum, value_delimiter = ',')]
    mechanisms: Vec<MechanismName>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the preset's synthetic dataset.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptMArgs {
    #[arg(long, conflicts_with = "profile")]
    input: Option<PathBuf>,
    /// Comma-separated per-user sample counts.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, default_value_t = 65.0)]
    upper_bound: f64,
    #[arg(long)]
    keep_zeros: bool,
    #[command(flatten)]
    hat: HatArg,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.001)]
    eps_min: f64,
    #[arg(long, default_value_t = 2.0)]
    eps_max: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_rule(s: &str) -> std::result::Result<MubRule, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_profile(s: &str) -> Result<MultiplicityProfile> {
    let counts = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Config(format!("bad profile entry `{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    MultiplicityProfile::new(counts)
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c).ok().filter(u8::is_ascii).ok_or_else(|| Error::Config(format!("delimiter `{c}` is not ASCII")))
}

fn load(path: &Path, upper_bound: f64, keep_zeros: bool, delimiter: char) -> Result<Bucketed> {
    let format = RecordFormat { delimiter: delimiter_byte(delimiter)? };
    let records = ingest::parse_records(BufReader::new(File::open(path)?), format)?;
    ingest::bucket_into_hats(&records, upper_bound, !keep_zeros)
}

fn parse_hat(s: &str) -> Result<HatKey> {
    let (region, slot) = s.rsplit_once(':').ok_or_else(|| Error::Config(format!("hat `{s}` is not region:timeslot")))?;
    let slot = slot.parse().map_err(|_| Error::Config(format!("bad timeslot in `{s}`")))?;
    Ok(HatKey::new(region, slot))
}

fn select_hat(mut bucketed: Bucketed, hat: Option<&str>) -> Result<HatDataset> {
    match hat {
        Some(h) => {
            let key = parse_hat(h)?;
            bucketed.hats.remove(&key).ok_or_else(|| Error::Config(format!("no data for hat {key}")))
        }
        None if bucketed.hats.len() == 1 => Ok(bucketed.hats.into_values().next().expect("one hat")),
        None if bucketed.hats.is_empty() => Err(Error::Config("input contains no usable records".into())),
        None => Err(Error::Config(format!("input has {} hats; pick one with --hat", bucketed.hats.len()))),
    }
}

fn with_sink(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_json(path: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    with_sink(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn ingest_cmd(input: &InputArgs, output: Option<&Path>) -> Result<()> {
    let b = load(&input.input, input.upper_bound, input.keep_zeros, input.delimiter)?;
    let hats: Vec<_> = b
        .hats
        .values()
        .map(|d| {
            let p = d.profile();
            json!({
                "hat": d.key().to_string(),
                "users": d.num_users(),
                "samples": d.num_samples(),
                "max_count": p.max_count(),
                "min_count": p.min_count(),
                "median_count": p.median(),
            })
        })
        .collect();
    write_json(output, &json!({ "summary": b.summary, "hats": hats }))
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    let base = match &a.profile {
        Some(s) => parse_profile(s)?,
        None => synth::itms_like_profile(a.seed),
    };
    let scaling = match a.scaling {
        ScalingKind::None => Scaling::None,
        ScalingKind::Sample => Scaling::Sample(a.lambda),
        ScalingKind::User => Scaling::User(a.lambda),
    };
    let spec = GeneratorSpec {
        mu: a.mu,
        sigma2: a.sigma2,
        upper_bound: a.upper_bound,
        base_profile: base,
        scaling,
        seed: a.seed,
        key: HatKey::new(a.region.clone(), a.timeslot),
    };
    let d = synth::generate_dataset(&spec)?;
    with_sink(a.output.as_deref(), |w| ingest::write_records(w, &synth::dataset_records(&d)))
}

fn release_cmd(a: &ReleaseArgs) -> Result<()> {
    let d = select_hat(
        load(&a.input.input, a.input.upper_bound, a.input.keep_zeros, a.input.delimiter)?,
        a.hat.hat.as_deref(),
    )?;
    let spec = MechanismSpec {
        name: a.mechanism.as_str().to_string(),
        m_ub: a.m_ub,
        strategy: a.strategy.map(Strategy::from),
        gamma: a.gamma,
        fill: a.fill.map(FillMode::from),
        label: None,
    };
    let report = spec.to_mechanism()?.release(&d, a.epsilon, a.seed)?;
    write_json(a.output.as_deref(), &json!({ "hat": d.key().to_string(), "report": report }))
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => SweepConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => match a.preset {
            Some(preset) => preset.config(eval::DEFAULT_TRIALS, 0),
            None => SweepConfig {
                mechanisms: Vec::new(),
                epsilons: eval::PRESET_EPSILONS.to_vec(),
                trials: eval::DEFAULT_TRIALS,
                base_seed: 0,
                output: None,
            },
        },
    };
    if !a.mechanisms.is_empty() {
        config.mechanisms = a.mechanisms.iter().map(|m| MechanismSpec::named(m.as_str())).collect();
    }
    if !a.epsilons.is_empty() {
        config.epsilons = a.epsilons.clone();
    }
    if let Some(t) = a.trials {
        config.trials = t;
    }
    if let Some(s) = a.seed {
        config.base_seed = s;
    }
    if a.output.is_some() {
        config.output = a.output.clone();
    }
    config.validate()?;
    let datasets = match (a.preset, &a.input) {
        (Some(preset), _) => vec![preset.dataset(a.data_seed)?],
        (None, Some(path)) => {
            let b = load(path, a.upper_bound, a.keep_zeros, a.delimiter)?;
            match &a.hat.hat {
                Some(h) => {
                    let d = select_hat(b, Some(h))?;
                    vec![NamedDataset { label: d.key().to_string(), data: d }]
                }
                None => b.hats.into_values().map(|d| NamedDataset { label: d.key().to_string(), data: d }).collect(),
            }
        }
        (None, None) => return Err(Error::Config("sweep needs --preset or --input".into())),
    };
    if datasets.is_empty() {
        return Err(Error::Config("input contains no usable records".into()));
    }
    let rows = eval::run_sweep(&config, &datasets)?;
    with_sink(config.output.as_deref(), |w| eval::write_rows(w, &rows))
}

fn opt_m_cmd(a: &OptMArgs) -> Result<()> {
    let p = match (&a.profile, &a.input) {
        (Some(s), _) => parse_profile(s)?,
        (None, Some(path)) => select_hat(load(path, a.upper_bound, a.keep_zeros, ',')?, a.hat.hat.as_deref())?.profile(),
        (None, None) => return Err(Error::Config("opt-m needs --profile or --input".into())),
    };
    if let Some(eps) = a.epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("epsilon {eps} must be positive and finite")));
        }
        let (m, err) = selection::minimax_m(&p, a.upper_bound, eps);
        let (lo, hi) = selection::epsilon_boundaries(&p);
        let value = json!({
            "epsilon": eps,
            "minimax": { "m_ub": m, "error": err },
            "epsilon_min": lo,
            "epsilon_max": hi,
            "median": p.median(),
            "sqrt": selection::sqrt_heuristic(&p),
            "relaxed": selection::convex_relaxation_m(&p),
        });
        return write_json(a.output.as_deref(), &value);
    }
    if !(a.eps_min > 0.0 && a.eps_min < a.eps_max && a.points >= 1) {
        return Err(Error::Config("need 0 < eps-min < eps-max and at least one point".into()));
    }
    let curve = selection::minimax_curve(&p, a.upper_bound, &selection::log_grid(a.eps_min, a.eps_max, a.points))?;
    with_sink(a.output.as_deref(), |w| eval::export_minimax(&curve, w))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { input, output } => ingest_cmd(input, output.as_deref()),
        Command::Synth(a) => synth_cmd(a),
        Command::Release(a) => release_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::OptM(a) => opt_m_cmd(a),
    }
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message.trim() }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
