//! Feature importance rankings (Lasso, ReliefF) and the adaptive
//! base-set / candidate-set selection loop.

mod adaptive;
mod lasso;
mod relieff;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::TableError;

pub use adaptive::{adaptive_select, adaptive_select_with, Decision, FeatureSet, SubsetTrainer, FALLBACK_BASE_SIZE};
pub use lasso::{
    geometric_grid, lambda_max, lasso_fit, lasso_objective, lasso_rank, LambdaRule, LassoFit, LassoOptions, Standardizer,
};
pub use relieff::{relieff_rank, ReliefOptions};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("column {column} is not standardized: {detail}")]
    NotStandardized { column: usize, detail: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("target is constant")]
    ConstantTarget,
    #[error("rankings disagree on tag set")]
    RankingMismatch,
    #[error("trainer failed: {0}")]
    Trainer(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMethod {
    Lasso,
    Relieff,
}

impl RankingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RankingMethod::Lasso => "lasso",
            RankingMethod::Relieff => "relieff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTag {
    pub tag: String,
    pub score: f64,
}

/// Tags ordered from most to least important.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub method: RankingMethod,
    pub entries: Vec<RankedTag>,
}

impl FeatureRanking {
    pub fn tags(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.tag.clone()).collect()
    }

    /// Zero-based rank of `tag`.
    pub fn position(&self, tag: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.tag == tag)
    }

    pub fn score(&self, tag: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.tag == tag).map(|e| e.score)
    }

    /// The first `ceil(fraction * len)` tags.
    pub fn top_fraction(&self, fraction: f64) -> Vec<String> {
        let k = (fraction * self.entries.len() as f64).ceil() as usize;
        self.entries.iter().take(k).map(|e| e.tag.clone()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SelectError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rank", "tag", "score"])?;
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([(i + 1).to_string(), e.tag.clone(), e.score.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
