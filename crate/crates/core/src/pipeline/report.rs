use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Variant, STAGE_BASE, STAGE_CORRECTED};
use crate::metrics::MetricsRow;

/// MAPE before and after one pipeline ingredient is switched on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub name: String,
    pub without: (String, String),
    pub with: (String, String),
    pub mape_without: Option<f64>,
    pub mape_with: Option<f64>,
}

impl Ablation {
    /// Relative MAPE change in percent; negative is an improvement.
    pub fn change(&self) -> Option<f64> {
        Some((self.mape_with? - self.mape_without?) / self.mape_without? * 100.0)
    }
}

fn lookup(rows: &[MetricsRow], model: &str, stage: &str) -> Option<f64> {
    rows.iter().find(|r| r.model == model && r.stage == stage).map(|r| r.report.mape)
}

pub fn ablations(rows: &[MetricsRow]) -> Vec<Ablation> {
    let pairs = [
        ("delay", (Variant::NoDelay, STAGE_BASE), (Variant::Full, STAGE_BASE)),
        ("selection", (Variant::NoSelection, STAGE_BASE), (Variant::Full, STAGE_BASE)),
        ("correction", (Variant::Full, STAGE_BASE), (Variant::Full, STAGE_CORRECTED)),
    ];
    pairs
        .into_iter()
        .map(|(name, (va, sa), (vb, sb))| Ablation {
            name: name.to_string(),
            without: (va.as_str().to_string(), sa.to_string()),
            with: (vb.as_str().to_string(), sb.to_string()),
            mape_without: lookup(rows, va.as_str(), sa),
            mape_with: lookup(rows, vb.as_str(), sb),
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Plain-text metrics table followed by the three ablations. Built only from
/// metrics rows so it can be regenerated from `metrics.csv`.
pub fn render_report(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:<14} {:<8} {:>10} {:>10} {:>10} {:>8} {:>6}", "dataset", "model", "stage", "MAPE%", "MAE", "NMSE", "R2", "n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            out,
            "{:<12} {:<14} {:<8} {:>10.4} {:>10.4} {:>10.6} {:>8.4} {:>6}",
            r.dataset, r.model, r.stage, m.mape, m.mae, m.nmse, m.r2, m.n
        );
    }
    out.push_str("\nablations (MAPE%)\n");
    for a in ablations(rows) {
        let change = a.change().map_or_else(|| "n/a".to_string(), |c| format!("{c:+.2}%"));
        let _ = writeln!(
            out,
            "{:<11} {}/{} {} -> {}/{} {}  change {}",
            a.name,
            a.without.0,
            a.without.1,
            cell(a.mape_without),
            a.with.0,
            a.with.1,
            cell(a.mape_with),
            change
        );
    }
    out
}
