//! Synthetic boiler-like scenarios with known delays, relevant tags and outliers.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use crate::timeseries::{Column, TableError, TimeSeriesTable, DEFAULT_SAMPLE_INTERVAL};

/// Largest delay a scenario may plant, in seconds.
pub const MAX_PLANTED_DELAY: i64 = 300;

/// Target level and span (mg/m³) before noise and trend.
const TARGET_BASE: f64 = 250.0;
const TARGET_SPAN: f64 = 150.0;

/// Outlier spike size in column standard deviations.
const SPIKE_SIGMAS: f64 = 6.0;

/// Operating ranges and units of the 55 plant variables, x1 first.
const PLANT_RANGES: [(f64, f64, &str, usize); 20] = [
    (16.771, 31.379, "MPa", 1),
    (571.708, 605.354, "°C", 1),
    (6.617, 8.941, "", 1),
    (34.053, 77.287, "°C", 1),
    (1798.56, 3187.22, "t/h", 1),
    (2.596, 5.647, "%", 1),
    (130.071, 140.147, "°C", 1),
    (158.303, 322.039, "t/h", 1),
    (21.923, 86.578, "°C", 6),
    (34.303, 209.429, "t/h", 10),
    (494.647, 999.145, "MW", 1),
    (-0.341, 0.142, "kPa", 1),
    (38.864, 76.959, "t/h", 6),
    (29.446, 218.082, "°C", 6),
    (98.142, 164.633, "t/h", 6),
    (39.692, 132.824, "t/h", 3),
    (34.019, 141.758, "t/h", 2),
    (596.977, 605.507, "°C", 1),
    (567.125, 606.765, "°C", 1),
    (2.288, 6.096, "%", 4),
];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("ground truth file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// u
    Affine,
    /// (2u - 1)^2
    Quadratic,
    /// sin(2 pi u)
    Sine,
}

impl Nonlinearity {
    fn apply(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Affine => u,
            Nonlinearity::Quadratic => (2.0 * u - 1.0).powi(2),
            Nonlinearity::Sine => (2.0 * std::f64::consts::PI * u).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    #[default]
    Steady,
    Rising,
    Falling,
    Drift,
}

impl Regime {
    /// Trend as a fraction of the target span at relative time `s` in [0, 1).
    fn trend(self, s: f64) -> f64 {
        match self {
            Regime::Steady => 0.0,
            Regime::Rising => s,
            Regime::Falling => -s,
            Regime::Drift => s + 0.5 * (3.0 * std::f64::consts::PI * s).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevantTag {
    pub tag: String,
    /// Planted delay in seconds; a multiple of the sample interval.
    pub delay: i64,
    pub weight: f64,
    pub nonlinearity: Nonlinearity,
}

impl RelevantTag {
    pub fn new(tag: impl Into<String>, delay: i64, weight: f64, nonlinearity: Nonlinearity) -> Self {
        Self { tag: tag.into(), delay, weight, nonlinearity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
    pub unit: String,
}

/// Default range for feature `index` (0-based): the plant table for the first
/// 55, the unit interval beyond.
pub fn default_range(index: usize) -> ValueRange {
    let mut first = 0;
    for &(lo, hi, unit, count) in &PLANT_RANGES {
        if index < first + count {
            return ValueRange { lo, hi, unit: unit.to_string() };
        }
        first += count;
    }
    ValueRange { lo: 0.0, hi: 1.0, unit: String::new() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_samples: usize,
    pub sample_interval: i64,
    /// Features are named x1..x{n_features}.
    pub n_features: usize,
    pub relevant: Vec<RelevantTag>,
    /// Marginal noise std as a fraction of the target span.
    pub noise_sigma: f64,
    /// AR(1) coefficient of the additive noise.
    pub residual_ar: f64,
    pub regime: Regime,
    /// Trend amplitude as a fraction of the target span.
    pub regime_amplitude: f64,
    pub outlier_rate: f64,
    /// Per-feature ranges; missing entries fall back to [`default_range`].
    pub value_ranges: Vec<ValueRange>,
    /// The last `n_twins` irrelevant features become noisy copies of relevant ones.
    pub n_twins: usize,
    /// Random-walk step std in range units.
    pub walk_step: f64,
    pub target_tag: String,
    pub start_time: i64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
            n_features: 12,
            relevant: vec![
                RelevantTag::new("x5", 85, 1.0, Nonlinearity::Affine),
                RelevantTag::new("x6", 0, 0.8, Nonlinearity::Affine),
                RelevantTag::new("x8", 115, 0.7, Nonlinearity::Quadratic),
                RelevantTag::new("x11", 70, 0.6, Nonlinearity::Sine),
            ],
            noise_sigma: 0.03,
            residual_ar: 0.0,
            regime: Regime::Steady,
            regime_amplitude: 0.3,
            outlier_rate: 0.0,
            value_ranges: Vec::new(),
            n_twins: 0,
            walk_step: 0.1,
            target_tag: "nox".into(),
            start_time: 0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn tag(index: usize) -> String {
        format!("x{}", index + 1)
    }

    pub fn range(&self, index: usize) -> ValueRange {
        self.value_ranges.get(index).cloned().unwrap_or_else(|| default_range(index))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        if self.n_samples < 2 || self.n_features == 0 {
            return bad(format!("{} samples, {} features", self.n_samples, self.n_features));
        }
        if self.sample_interval <= 0 {
            return bad(format!("sample interval {}", self.sample_interval));
        }
        let tags: Vec<String> = (0..self.n_features).map(Self::tag).collect();
        for r in &self.relevant {
            if !tags.contains(&r.tag) {
                return bad(format!("relevant tag {} is not a feature", r.tag));
            }
            if r.delay < 0 || r.delay % self.sample_interval != 0 || r.delay > MAX_PLANTED_DELAY {
                return bad(format!("delay {} s for {} is not a step multiple in [0, {MAX_PLANTED_DELAY}]", r.delay, r.tag));
            }
            if r.delay >= self.n_samples as i64 * self.sample_interval {
                return bad(format!("delay {} s exceeds the series length", r.delay));
            }
            if !r.weight.is_finite() {
                return bad(format!("weight for {}", r.tag));
            }
        }
        let mut seen: Vec<&str> = self.relevant.iter().map(|r| r.tag.as_str()).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate relevant tag".into());
        }
        if self.relevant.iter().map(|r| r.weight.abs()).sum::<f64>() == 0.0 && !self.relevant.is_empty() {
            return bad("all relevant weights are zero".into());
        }
        if !(0.0..0.05).contains(&self.outlier_rate) {
            return bad(format!("outlier rate {} not in [0, 0.05)", self.outlier_rate));
        }
        if !(0.0..1.0).contains(&self.residual_ar) || !(self.noise_sigma >= 0.0) || !(self.walk_step > 0.0) {
            return bad("noise_sigma >= 0, residual_ar in [0, 1) and walk_step > 0 required".into());
        }
        if self.n_twins > 0 && self.relevant.is_empty() {
            return bad("twins need relevant tags".into());
        }
        if self.n_twins > self.n_features - self.relevant.len() {
            return bad(format!("{} twins but only {} irrelevant features", self.n_twins, self.n_features - self.relevant.len()));
        }
        for i in 0..self.n_features {
            let r = self.range(i);
            if !(r.hi > r.lo) {
                return bad(format!("range for {}", Self::tag(i)));
            }
        }
        if self.target_tag.is_empty() || tags.contains(&self.target_tag) {
            return bad(format!("target tag {:?}", self.target_tag));
        }
        Ok(())
    }
}

/// What the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub target_tag: String,
    pub relevant: Vec<String>,
    /// Planted delay per relevant tag, seconds.
    pub delays: BTreeMap<String, i64>,
    /// twin tag -> the relevant tag it mimics
    pub twins: BTreeMap<String, String>,
    /// Row indices of injected spikes per tag.
    pub outliers: BTreeMap<String, Vec<usize>>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn outlier_count(&self) -> usize {
        self.outliers.values().map(Vec::len).sum()
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), SynthError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, SynthError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// Reflecting Gaussian random walk on [0, 1].
fn walk(len: usize, step: f64, stream: u64) -> Vec<f64> {
    let mut rng = seed::rng(stream);
    let normal = Normal::new(0.0, step).expect("positive step");
    let mut u = rng.random_range(0.2..0.8);
    (0..len)
        .map(|_| {
            let cur = u;
            u += normal.sample(&mut rng);
            // two reflections cover any step below the interval width
            for _ in 0..2 {
                if u < 0.0 {
                    u = -u;
                }
                if u > 1.0 {
                    u = 2.0 - u;
                }
            }
            u = u.clamp(0.0, 1.0);
            cur
        })
        .collect()
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Picks `count` indices with no two adjacent, so each spike is isolated.
fn isolated_indices(n: usize, count: usize, stream: u64) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    // choose among n - count + 1 slots then spread; index i becomes i + rank
    let slots = n + 1 - count;
    let mut rng = seed::rng(stream);
    let mut picks = sample(&mut rng, slots, count).into_vec();
    picks.sort_unstable();
    picks.into_iter().enumerate().map(|(rank, i)| i + rank).collect()
}

/// Generates the table and its ground truth. Rows cover `n_samples` steps;
/// every lagged value a row needs exists because walks start earlier.
pub fn generate(cfg: &ScenarioConfig) -> Result<(TimeSeriesTable, GroundTruth), SynthError> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let warmup = (MAX_PLANTED_DELAY / cfg.sample_interval) as usize;
    let len = n + warmup;

    let mut unit: Vec<Vec<f64>> =
        (0..cfg.n_features).map(|j| walk(len, cfg.walk_step, seed::derive(cfg.seed, 100 + j as u64))).collect();

    let relevant_idx: Vec<usize> =
        cfg.relevant.iter().map(|r| r.tag[1..].parse::<usize>().expect("validated tag") - 1).collect();
    let mut twins = BTreeMap::new();
    let irrelevant: Vec<usize> = (0..cfg.n_features).filter(|j| !relevant_idx.contains(j)).collect();
    for (k, &j) in irrelevant.iter().rev().take(cfg.n_twins).enumerate() {
        let src = relevant_idx[k % relevant_idx.len()];
        let own = &unit[j];
        let mix: Vec<f64> = unit[src].iter().zip(own).map(|(s, o)| 0.7 * s + 0.3 * o).collect();
        unit[j] = mix;
        twins.insert(ScenarioConfig::tag(j), ScenarioConfig::tag(src));
    }

    let weight_mass: f64 = cfg.relevant.iter().map(|r| r.weight.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut rng = seed::rng(seed::derive(cfg.seed, 1));
    let sigma = cfg.noise_sigma * TARGET_SPAN;
    let innovation = Normal::new(0.0, sigma * (1.0 - cfg.residual_ar.powi(2)).sqrt()).expect("finite sigma");
    let mut noise = if sigma > 0.0 { Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng) } else { 0.0 };
    let mut target = Vec::with_capacity(n);
    for t in 0..n {
        let row = t + warmup;
        let signal: f64 = cfg
            .relevant
            .iter()
            .zip(&relevant_idx)
            .map(|(r, &j)| {
                let lag = (r.delay / cfg.sample_interval) as usize;
                r.weight * r.nonlinearity.apply(unit[j][row - lag])
            })
            .sum::<f64>()
            / weight_mass;
        if t > 0 && sigma > 0.0 {
            noise = cfg.residual_ar * noise + innovation.sample(&mut rng);
        }
        let trend = cfg.regime_amplitude * cfg.regime.trend(t as f64 / n as f64);
        target.push(TARGET_BASE + TARGET_SPAN * (signal + trend) + noise);
    }

    let mut columns: Vec<Column> = (0..cfg.n_features)
        .map(|j| {
            let r = cfg.range(j);
            let values = unit[j][warmup..].iter().map(|u| r.lo + u * (r.hi - r.lo)).collect();
            Column::new(ScenarioConfig::tag(j), values).with_unit(r.unit)
        })
        .collect();
    columns.push(Column::new(cfg.target_tag.clone(), target).with_unit("mg/m3"));

    let mut outliers = BTreeMap::new();
    let count = (cfg.outlier_rate * n as f64).round() as usize;
    if count > 0 {
        for (c, col) in columns.iter_mut().enumerate() {
            let stream = seed::derive(cfg.seed, 2000 + c as u64);
            let idx = isolated_indices(n, count, stream);
            let sd = std_dev(&col.values);
            let mut signs = seed::rng(seed::derive(stream, 1));
            for &i in &idx {
                let s = if signs.random_bool(0.5) { 1.0 } else { -1.0 };
                col.values[i] += s * SPIKE_SIGMAS * sd;
            }
            outliers.insert(col.tag.clone(), idx);
        }
    }

    let table = TimeSeriesTable::from_columns(cfg.sample_interval, cfg.start_time, columns, cfg.target_tag.clone())?;
    let truth = GroundTruth {
        target_tag: cfg.target_tag.clone(),
        relevant: cfg.relevant.iter().map(|r| r.tag.clone()).collect(),
        delays: cfg.relevant.iter().map(|r| (r.tag.clone(), r.delay)).collect(),
        twins,
        outliers,
        seed: cfg.seed,
    };
    Ok((table, truth))
}
