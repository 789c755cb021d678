//! Error-corrected ELM: a base ELM plus an error ELM fed with the inputs and
//! the last `lag_depth` residuals.

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::DelayProfile;
use crate::elm::{elm_train, ElmConfig, ElmError, ElmModel};
use crate::seed;
use crate::select::FeatureSet;
use crate::timeseries::{NormParams, TableError, TimeSeriesTable};

#[derive(Debug, Error)]
pub enum EcError {
    #[error("need more than {needed} training rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("lag depth must be >= 1")]
    ZeroLag,
    #[error("non-finite residual at training row {0}")]
    NonFiniteResidual(usize),
    #[error("measured-feedback mode needs {needed} measurements, got {got}")]
    MissingMeasurements { needed: usize, got: usize },
    #[error("warm-start buffer has {got} residuals, lag depth is {needed}")]
    WarmStart { needed: usize, got: usize },
    #[error(transparent)]
    Elm(#[from] ElmError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcConfig {
    pub base: ElmConfig,
    pub error: ElmConfig,
    pub lag_depth: usize,
}

impl Default for EcConfig {
    fn default() -> Self {
        Self { base: ElmConfig::default(), error: ElmConfig::default(), lag_depth: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Feed back `y_measured - y_initial` after every step.
    #[default]
    MeasuredFeedback,
    /// Feed back the error model's own estimate.
    Recursive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::MeasuredFeedback => "measured_feedback",
            Mode::Recursive => "recursive",
        }
    }
}

/// Preprocessing state that travels with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcContext {
    pub norm: NormParams,
    pub delay_profile: DelayProfile,
    pub feature_set: FeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcElmModel {
    pub base: ElmModel,
    pub error_model: ElmModel,
    pub lag_depth: usize,
    pub target_tag: String,
    /// Last `lag_depth` training residuals, oldest first.
    pub warm_start: Vec<f64>,
    pub context: EcContext,
}

/// Base-model fit plus its in-sample residuals.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: EcElmModel,
    /// `y(t) - base(x(t))` over every training row.
    pub residuals: Vec<f64>,
}

fn design(table: &TimeSeriesTable, tags: &[String]) -> Result<DMatrix<f64>, EcError> {
    let cols: Vec<&[f64]> = tags.iter().map(|t| table.values(t)).collect::<Result<_, _>>()?;
    Ok(DMatrix::from_fn(table.len(), tags.len(), |i, j| cols[j][i]))
}

fn lag_tags(lag: usize) -> impl Iterator<Item = String> {
    (1..=lag).map(|k| format!("e(t-{k})"))
}

/// Error-model input row: features followed by e(t-1), ..., e(t-lag).
fn error_row(x: &[f64], buffer: &VecDeque<f64>) -> Vec<f64> {
    let mut row = x.to_vec();
    row.extend(buffer.iter().rev());
    row
}

/// Trains the base ELM on `train` (normalized, delay-aligned, already
/// restricted to the selected tags), then the error ELM on its in-sample
/// residuals. The error model's seed is derived from `seed` on stream 1.
pub fn ec_train(train: &TimeSeriesTable, cfg: &EcConfig, seed: u64, context: EcContext) -> Result<TrainOutput, EcError> {
    let lag = cfg.lag_depth;
    if lag == 0 {
        return Err(EcError::ZeroLag);
    }
    let n = train.len();
    if n <= lag + 1 {
        return Err(EcError::TooFewRows { rows: n, needed: lag + 1 });
    }
    let tags = train.input_tags();
    let x = design(train, &tags)?;
    let y = train.target();
    let base = elm_train(&x, &DMatrix::from_column_slice(n, 1, y), &cfg.base, seed, &tags)?;
    let fitted = base.predict_column(&x)?;
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    if let Some(i) = residuals.iter().position(|e| !e.is_finite()) {
        return Err(EcError::NonFiniteResidual(i));
    }

    let p = tags.len();
    let rows = n - lag;
    let mut ex = DMatrix::zeros(rows, p + lag);
    let mut ey = DMatrix::zeros(rows, 1);
    for (r, t) in (lag..n).enumerate() {
        for j in 0..p {
            ex[(r, j)] = x[(t, j)];
        }
        for k in 1..=lag {
            ex[(r, p + k - 1)] = residuals[t - k];
        }
        ey[(r, 0)] = residuals[t];
    }
    let error_tags: Vec<String> = tags.iter().cloned().chain(lag_tags(lag)).collect();
    let error_model = elm_train(&ex, &ey, &cfg.error, seed::derive(seed, 1), &error_tags)?;
    let model = EcElmModel {
        base,
        error_model,
        lag_depth: lag,
        target_tag: train.target_tag().to_string(),
        warm_start: residuals[n - lag..].to_vec(),
        context,
    };
    Ok(TrainOutput { model, residuals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: i64,
    pub y_initial: f64,
    pub y_error: f64,
    pub y_final: f64,
    pub y_measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrace {
    pub mode: Mode,
    pub steps: Vec<TraceStep>,
    /// Residual pushed into the lag buffer after each step.
    pub feedback: Vec<f64>,
}

impl PredictionTrace {
    pub fn final_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.y_final).collect()
    }

    pub fn initial_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.y_initial).collect()
    }

    pub fn measured_values(&self) -> Option<Vec<f64>> {
        self.steps.iter().map(|s| s.y_measured).collect()
    }

    /// True when `y_final == y_initial + y_error` holds exactly at every step.
    pub fn identity_holds(&self) -> bool {
        self.steps.iter().all(|s| s.y_final == s.y_initial + s.y_error)
    }

    /// The same trace in target units: initial and measured values are
    /// denormalized, the error (a difference) is only rescaled, and the final
    /// value is recomputed as their sum.
    pub fn to_physical(&self, norm: &NormParams, target_tag: &str) -> Result<PredictionTrace, EcError> {
        let r = norm.get(target_tag)?;
        if r.is_degenerate() {
            return Err(TableError::DegenerateRange(target_tag.to_string()).into());
        }
        let span = r.max - r.min;
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let y_initial = s.y_initial * span + r.min;
                let y_error = s.y_error * span;
                TraceStep {
                    t: s.t,
                    y_initial,
                    y_error,
                    y_final: y_initial + y_error,
                    y_measured: s.y_measured.map(|m| m * span + r.min),
                }
            })
            .collect();
        Ok(PredictionTrace { mode: self.mode, steps, feedback: self.feedback.iter().map(|e| e * span).collect() })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EcError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "y_initial", "y_error", "y_final", "y_measured"])?;
        for s in &self.steps {
            w.write_record([
                s.t.to_string(),
                s.y_initial.to_string(),
                s.y_error.to_string(),
                s.y_final.to_string(),
                s.y_measured.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`]; the mode and feedback are not stored there.
    pub fn read_steps<R: Read>(reader: R) -> Result<Vec<TraceStep>, EcError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut steps = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| rec.get(i).and_then(|s| s.trim().parse::<f64>().ok());
            steps.push(TraceStep {
                t: rec.get(0).and_then(|s| s.trim().parse().ok()).unwrap_or_default(),
                y_initial: num(1).unwrap_or(f64::NAN),
                y_error: num(2).unwrap_or(f64::NAN),
                y_final: num(3).unwrap_or(f64::NAN),
                y_measured: num(4),
            });
        }
        Ok(steps)
    }
}

impl EcElmModel {
    pub fn input_tags(&self) -> &[String] {
        self.base.input_tags()
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), EcError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, EcError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// One-step-ahead predictions over `test` (normalized, aligned), starting
/// from the model's warm-start residuals.
pub fn ec_predict(
    model: &EcElmModel,
    test: &TimeSeriesTable,
    mode: Mode,
    y_measured: Option<&[f64]>,
) -> Result<PredictionTrace, EcError> {
    ec_predict_from(model, test, mode, y_measured, &model.warm_start)
}

/// As [`ec_predict`] with an explicit warm-start buffer (oldest first).
pub fn ec_predict_from(
    model: &EcElmModel,
    test: &TimeSeriesTable,
    mode: Mode,
    y_measured: Option<&[f64]>,
    warm_start: &[f64],
) -> Result<PredictionTrace, EcError> {
    let lag = model.lag_depth;
    if warm_start.len() != lag {
        return Err(EcError::WarmStart { needed: lag, got: warm_start.len() });
    }
    let n = test.len();
    if let Some(m) = y_measured {
        if m.len() != n {
            return Err(EcError::MissingMeasurements { needed: n, got: m.len() });
        }
    } else if mode == Mode::MeasuredFeedback {
        return Err(EcError::MissingMeasurements { needed: n, got: 0 });
    }
    let x = design(test, model.input_tags())?;
    let mut buffer: VecDeque<f64> = warm_start.iter().copied().collect();
    let mut steps = Vec::with_capacity(n);
    let mut feedback = Vec::with_capacity(n);
    let mut row = vec![0.0; x.ncols()];
    for t in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(t, j)];
        }
        let y_initial = model.base.predict_row(&row)?[0];
        let y_error = model.error_model.predict_row(&error_row(&row, &buffer))?[0];
        let measured = y_measured.map(|m| m[t]);
        let e = match mode {
            Mode::MeasuredFeedback => measured.expect("checked above") - y_initial,
            Mode::Recursive => y_error,
        };
        buffer.pop_front();
        buffer.push_back(e);
        feedback.push(e);
        steps.push(TraceStep { t: test.timestamps()[t], y_initial, y_error, y_final: y_initial + y_error, y_measured: measured });
    }
    Ok(PredictionTrace { mode, steps, feedback })
}
