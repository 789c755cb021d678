//! Per-variable delay estimation by MIC scan and delay-aligned table reconstruction.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mic::{mic, MicConfig, MicError, MIN_SAMPLES};
use crate::timeseries::{Column, TableError, TimeSeriesTable};

#[derive(Debug, Error)]
pub enum DelayError {
    #[error(transparent)]
    Mic(#[from] MicError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("series too short for max delay {max_delay} s: {len} samples, need more than {needed}")]
    SeriesTooShort { max_delay: i64, len: usize, needed: usize },
    #[error("invalid delay scan: {0}")]
    InvalidScan(String),
    #[error("delay profile has no entry for {0}")]
    MissingTag(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Candidate delays `0, step, 2 step, ..., max_delay` (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayScan {
    pub max_delay: i64,
    pub step: i64,
    pub mic: MicConfig,
}

impl Default for DelayScan {
    fn default() -> Self {
        Self { max_delay: 300, step: 5, mic: MicConfig::default() }
    }
}

impl DelayScan {
    fn validate(&self) -> Result<(), DelayError> {
        if self.step <= 0 || self.max_delay < 0 || self.max_delay % self.step != 0 {
            return Err(DelayError::InvalidScan(format!(
                "max_delay {} must be a nonnegative multiple of step {}",
                self.max_delay, self.step
            )));
        }
        self.mic.validate()?;
        Ok(())
    }

    pub fn max_shift(&self) -> usize {
        (self.max_delay / self.step) as usize
    }

    fn check_length(&self, len: usize) -> Result<(), DelayError> {
        let needed = self.max_shift() + MIN_SAMPLES;
        if len <= needed {
            return Err(DelayError::SeriesTooShort { max_delay: self.max_delay, len, needed });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    pub delay_seconds: i64,
    pub mic_score: f64,
    /// MIC at every candidate delay, in scan order.
    pub scores: Vec<(i64, f64)>,
}

/// Pairs `x(t - shift)` with `y(t)` over the overlapping rows.
pub fn align<'a>(x: &'a [f64], y: &'a [f64], shift: usize) -> (&'a [f64], &'a [f64]) {
    let n = x.len().min(y.len());
    (&x[..n - shift], &y[shift..n])
}

/// Scans every candidate delay and returns the one with the largest MIC.
/// Ties go to the smallest delay.
pub fn estimate_delay(x: &[f64], y: &[f64], scan: &DelayScan) -> Result<DelayEstimate, DelayError> {
    scan.validate()?;
    if x.len() != y.len() {
        return Err(MicError::LengthMismatch(x.len(), y.len()).into());
    }
    scan.check_length(x.len())?;
    let mut scores = Vec::with_capacity(scan.max_shift() + 1);
    let (mut best_delay, mut best_score) = (0, f64::NEG_INFINITY);
    for shift in 0..=scan.max_shift() {
        let (xs, ys) = align(x, y, shift);
        let score = mic(xs, ys, &scan.mic)?;
        let delay = shift as i64 * scan.step;
        if score > best_score {
            best_score = score;
            best_delay = delay;
        }
        scores.push((delay, score));
    }
    Ok(DelayEstimate { delay_seconds: best_delay, mic_score: best_score, scores })
}

/// Permutation null for the scan maximum: the `quantile` of
/// `max over candidates` MIC between an index ramp and shuffled copies of it.
///
/// With equal-frequency binning the MIC of distinct-valued data depends only
/// on ranks, so this bound depends on the series length alone.
pub fn scan_null_bound(n: usize, scan: &DelayScan, trials: usize, quantile: f64, seed: u64) -> Result<f64, DelayError> {
    scan.validate()?;
    scan.check_length(n)?;
    let ramp: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut maxima: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
            let mut best = 0.0f64;
            for shift in 0..=scan.max_shift() {
                let len = n - shift;
                let mut y: Vec<f64> = ramp[..len].to_vec();
                y.shuffle(&mut rng);
                best = best.max(mic(&ramp[..len], &y, &scan.mic)?);
            }
            Ok(best)
        })
        .collect::<Result<_, DelayError>>()?;
    if maxima.is_empty() {
        return Ok(0.0);
    }
    maxima.sort_by(f64::total_cmp);
    let idx = ((quantile * maxima.len() as f64).ceil() as usize).clamp(1, maxima.len()) - 1;
    Ok(maxima[idx])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEntry {
    pub tag: String,
    pub delay_seconds: i64,
    pub mic_score: f64,
}

/// Per-variable delays relative to the target, with their MIC scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub min_delay: i64,
    pub max_delay: i64,
    pub step: i64,
    /// Scores below this bound are reported as low confidence.
    #[serde(default)]
    pub null_bound: Option<f64>,
    pub entries: Vec<DelayEntry>,
}

impl DelayProfile {
    /// A profile assigning zero delay to every tag.
    pub fn zero(tags: &[String], step: i64) -> Self {
        Self {
            min_delay: 0,
            max_delay: 0,
            step,
            null_bound: None,
            entries: tags
                .iter()
                .map(|t| DelayEntry { tag: t.clone(), delay_seconds: 0, mic_score: 0.0 })
                .collect(),
        }
    }

    pub fn get(&self, tag: &str) -> Option<&DelayEntry> {
        self.entries.iter().find(|e| e.tag == tag)
    }

    pub fn delay(&self, tag: &str) -> Result<i64, DelayError> {
        self.get(tag).map(|e| e.delay_seconds).ok_or_else(|| DelayError::MissingTag(tag.to_string()))
    }

    pub fn is_low_confidence(&self, tag: &str) -> bool {
        match (self.null_bound, self.get(tag)) {
            (Some(bound), Some(e)) => e.mic_score < bound,
            _ => false,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DelayError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tag", "delay_seconds", "mic_score"])?;
        for e in &self.entries {
            w.write_record([e.tag.clone(), e.delay_seconds.to_string(), e.mic_score.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Estimates the delay of every input column of `table` against its target.
/// Columns are scanned in parallel; the result is in table order regardless.
pub fn scan_delays(table: &TimeSeriesTable, scan: &DelayScan) -> Result<DelayProfile, DelayError> {
    scan.validate()?;
    scan.check_length(table.len())?;
    let target = table.target();
    let tags = table.input_tags();
    let entries = tags
        .par_iter()
        .map(|tag| {
            let est = estimate_delay(table.values(tag)?, target, scan)?;
            Ok(DelayEntry { tag: tag.clone(), delay_seconds: est.delay_seconds, mic_score: est.mic_score })
        })
        .collect::<Result<Vec<_>, DelayError>>()?;
    Ok(DelayProfile { min_delay: 0, max_delay: scan.max_delay, step: scan.step, null_bound: None, entries })
}

/// Shifts every input column forward by its delay (row `t` holds `x(t - d)`)
/// and drops the leading rows where any shifted value is undefined.
pub fn reconstruct_with_delays(table: &TimeSeriesTable, profile: &DelayProfile) -> Result<TimeSeriesTable, DelayError> {
    let interval = table.sample_interval();
    let mut shifts = Vec::new();
    for tag in table.input_tags() {
        let d = profile.delay(&tag)?;
        if d < 0 || d % interval != 0 {
            return Err(DelayError::InvalidScan(format!(
                "delay {d} s for {tag} is not a nonnegative multiple of {interval} s"
            )));
        }
        shifts.push((tag, (d / interval) as usize));
    }
    let max_shift = shifts.iter().map(|(_, s)| *s).max().unwrap_or(0);
    let n = table.len();
    if max_shift >= n {
        return Err(DelayError::SeriesTooShort { max_delay: max_shift as i64 * interval, len: n, needed: max_shift });
    }
    let out_len = n - max_shift;
    let mut columns = Vec::with_capacity(table.columns().len());
    for col in table.columns() {
        let shift = shifts.iter().find(|(t, _)| t == &col.tag).map(|(_, s)| *s).unwrap_or(0);
        let start = max_shift - shift;
        columns.push(Column {
            tag: col.tag.clone(),
            values: col.values[start..start + out_len].to_vec(),
            unit: col.unit.clone(),
        });
    }
    let timestamps = table.timestamps()[max_shift..].to_vec();
    Ok(TimeSeriesTable::new(interval, timestamps, columns, table.target_tag())?)
}
