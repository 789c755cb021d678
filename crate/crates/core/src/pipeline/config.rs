use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::delay::DelayScan;
use crate::ec_model::Mode;
use crate::elm::Activation;
use crate::mic::{Binning, MicConfig};
use crate::select::LambdaRule;
use crate::synth::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Input CSV; when absent, stages read `data.csv` from `out_dir`.
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub target: String,
    /// Input tags to use; empty means every non-target column.
    pub active_tags: Vec<String>,
    pub seed: u64,
    pub split: SplitConfig,
    pub delay: DelayConfig,
    pub selection: SelectionConfig,
    pub elm: ElmGridConfig,
    pub ec: EcSettings,
    pub report: ReportConfig,
    /// Scenario for the `simulate` stage.
    pub simulate: ScenarioConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            out_dir: PathBuf::from("out"),
            target: "nox".into(),
            active_tags: Vec::new(),
            seed: 0,
            split: SplitConfig::default(),
            delay: DelayConfig::default(),
            selection: SelectionConfig::default(),
            elm: ElmGridConfig::default(),
            ec: EcSettings::default(),
            report: ReportConfig::default(),
            simulate: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Leading rows used for training; overrides `train_fraction` when set.
    pub n_train: Option<usize>,
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { n_train: None, train_fraction: 0.75 }
    }
}

impl SplitConfig {
    pub fn rows(&self, n: usize) -> usize {
        self.n_train.unwrap_or_else(|| (self.train_fraction * n as f64).round() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayConfig {
    /// Seconds.
    pub max_delay: i64,
    pub step: i64,
    pub b_exponent: f64,
    pub max_grid_cells_cap: usize,
    pub binning: Binning,
    /// Permutation trials for the low-confidence bound; 0 disables it.
    pub null_trials: usize,
    pub null_quantile: f64,
}

impl Default for DelayConfig {
    fn default() -> Self {
        let mic = MicConfig::default();
        Self {
            max_delay: 300,
            step: 5,
            b_exponent: mic.b_exponent,
            max_grid_cells_cap: mic.max_grid_cells_cap,
            binning: mic.binning,
            null_trials: 20,
            null_quantile: 0.95,
        }
    }
}

impl DelayConfig {
    pub fn scan(&self) -> DelayScan {
        DelayScan {
            max_delay: self.max_delay,
            step: self.step,
            mic: MicConfig { b_exponent: self.b_exponent, max_grid_cells_cap: self.max_grid_cells_cap, binning: self.binning },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub enabled: bool,
    /// Fraction of each ranking whose intersection seeds the base set.
    pub top_fraction: f64,
    pub relieff_k: usize,
    /// Sampled instances; capped at the row count.
    pub relieff_m: usize,
    pub relieff_classes: usize,
    /// Geometric lambda grid from lambda_max down to `lambda_min_ratio * lambda_max`.
    pub lambda_count: usize,
    pub lambda_min_ratio: f64,
    pub lambda_rule: LambdaRule,
    pub folds: usize,
    pub lasso_tol: f64,
    pub lasso_max_iter: usize,
    pub val_fraction: f64,
    /// ELM restarts averaged per candidate evaluation.
    pub restarts: usize,
    pub trainer_hidden: usize,
    pub trainer_ridge: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            top_fraction: 0.5,
            relieff_k: 10,
            relieff_m: 400,
            relieff_classes: 5,
            lambda_count: 50,
            lambda_min_ratio: 1e-3,
            lambda_rule: LambdaRule::OneStdErr,
            folds: 5,
            lasso_tol: 1e-6,
            lasso_max_iter: 10_000,
            val_fraction: 0.2,
            restarts: 5,
            trainer_hidden: 50,
            trainer_ridge: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElmGridConfig {
    pub hidden_grid: Vec<usize>,
    pub ridge_grid: Vec<f64>,
    pub activation: Activation,
    /// Restarts averaged per grid point.
    pub tuning_restarts: usize,
    pub val_fraction: f64,
}

impl Default for ElmGridConfig {
    fn default() -> Self {
        Self {
            hidden_grid: vec![50, 100, 200, 400],
            ridge_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            activation: Activation::Sigmoid,
            tuning_restarts: 3,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcSettings {
    pub lag_depth: usize,
    pub mode: Mode,
    /// Error-model hidden count; `None` reuses the tuned base value.
    pub error_hidden: Option<usize>,
    pub error_ridge: Option<f64>,
}

impl Default for EcSettings {
    fn default() -> Self {
        Self { lag_depth: 10, mode: Mode::MeasuredFeedback, error_hidden: None, error_ridge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub dataset: String,
    pub histogram_bin_width: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { dataset: "synthetic".into(), histogram_bin_width: 5.0 }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.target.is_empty() {
            return bad("target tag is empty");
        }
        if self.elm.hidden_grid.is_empty() || self.elm.hidden_grid.contains(&0) {
            return bad("elm.hidden_grid must be nonempty and positive");
        }
        if self.elm.ridge_grid.is_empty() || self.elm.ridge_grid.iter().any(|r| !(*r >= 0.0)) {
            return bad("elm.ridge_grid must be nonempty and nonnegative");
        }
        if self.elm.tuning_restarts == 0 || self.selection.restarts == 0 {
            return bad("restart counts must be >= 1");
        }
        if !(self.elm.val_fraction > 0.0 && self.elm.val_fraction <= 0.5) {
            return bad("elm.val_fraction must be in (0, 0.5]");
        }
        if self.selection.lambda_count == 0 || !(self.selection.lambda_min_ratio > 0.0 && self.selection.lambda_min_ratio < 1.0) {
            return bad("selection.lambda_count >= 1 and lambda_min_ratio in (0, 1) required");
        }
        if self.ec.lag_depth == 0 {
            return bad("ec.lag_depth must be >= 1");
        }
        if !(self.report.histogram_bin_width > 0.0) {
            return bad("report.histogram_bin_width must be positive");
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return bad("split.train_fraction must be in (0, 1)");
        }
        Ok(())
    }
}
