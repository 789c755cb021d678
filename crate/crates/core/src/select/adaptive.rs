//! Base-set / candidate-set wrapper selection.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{FeatureRanking, SelectError};
use crate::timeseries::{split_contiguous, TimeSeriesTable};

/// Base size used when the two top halves share no tag.
pub const FALLBACK_BASE_SIZE: usize = 10;

/// Fits a model on `train` restricted to `tags` and reports validation MAPE (%).
pub trait SubsetTrainer: Sync {
    fn validation_mape(&self, train: &TimeSeriesTable, val: &TimeSeriesTable, tags: &[String])
        -> Result<f64, SelectError>;
}

impl<F> SubsetTrainer for F
where
    F: Fn(&TimeSeriesTable, &TimeSeriesTable, &[String]) -> Result<f64, SelectError> + Sync,
{
    fn validation_mape(&self, train: &TimeSeriesTable, val: &TimeSeriesTable, tags: &[String]) -> Result<f64, SelectError> {
        self(train, val, tags)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub candidate: String,
    pub mape_before: f64,
    pub mape_after: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    /// Final selected tags, in table column order.
    pub base: Vec<String>,
    pub initial_base: Vec<String>,
    /// Validation MAPE of the initial base; `None` when the loop was not run.
    pub initial_mape: Option<f64>,
    pub final_mape: Option<f64>,
    pub history: Vec<Decision>,
}

impl FeatureSet {
    /// A set that keeps every tag without running the loop.
    pub fn all(tags: Vec<String>) -> Self {
        Self { initial_base: tags.clone(), base: tags, initial_mape: None, final_mape: None, history: Vec::new() }
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.base.iter().any(|t| t == tag)
    }

    /// One row per decision, with a leading row for the initial base.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SelectError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "candidate", "mape_before", "mape_after", "kept"])?;
        let initial = self.initial_mape.map(|m| m.to_string()).unwrap_or_default();
        w.write_record(["0", "", "", &initial, "true"])?;
        for (i, d) in self.history.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                d.candidate.clone(),
                d.mape_before.to_string(),
                d.mape_after.to_string(),
                d.kept.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "initial base ({}): {}", self.initial_base.len(), self.initial_base.join(", "));
        if let Some(m) = self.initial_mape {
            let _ = writeln!(out, "initial validation MAPE: {m:.4}%");
        }
        for d in &self.history {
            let verdict = if d.kept { "kept" } else { "rejected" };
            let _ = writeln!(out, "  {:<12} {:.4}% -> {:.4}%  {verdict}", d.candidate, d.mape_before, d.mape_after);
        }
        let _ = writeln!(out, "final base ({}): {}", self.base.len(), self.base.join(", "));
        if let Some(m) = self.final_mape {
            let _ = writeln!(out, "final validation MAPE: {m:.4}%");
        }
        out
    }
}

/// Tags of both rankings sorted by summed rank position, ties by `a` position then name.
fn mean_rank_order(a: &FeatureRanking, b: &FeatureRanking) -> Result<Vec<String>, SelectError> {
    let sa: BTreeSet<&str> = a.entries.iter().map(|e| e.tag.as_str()).collect();
    let sb: BTreeSet<&str> = b.entries.iter().map(|e| e.tag.as_str()).collect();
    if sa != sb || sa.len() != a.entries.len() || sb.len() != b.entries.len() {
        return Err(SelectError::RankingMismatch);
    }
    let mut keyed: Vec<(usize, usize, String)> = a
        .entries
        .iter()
        .enumerate()
        .map(|(pa, e)| (pa + b.position(&e.tag).unwrap_or(usize::MAX / 2), pa, e.tag.clone()))
        .collect();
    keyed.sort();
    Ok(keyed.into_iter().map(|(_, _, t)| t).collect())
}

/// Runs the selection loop: seed the base with tags in the top half of both
/// rankings, then try every remaining tag in mean-rank order and keep it only
/// when validation MAPE strictly drops.
///
/// The validation split is the contiguous tail `ceil(val_fraction * n)` rows
/// of `table`. The trainer is called exactly `1 + candidates` times.
pub fn adaptive_select(
    table: &TimeSeriesTable,
    trainer: &dyn SubsetTrainer,
    rank_a: &FeatureRanking,
    rank_b: &FeatureRanking,
    val_fraction: f64,
) -> Result<FeatureSet, SelectError> {
    adaptive_select_with(table, trainer, rank_a, rank_b, 0.5, val_fraction)
}

/// As [`adaptive_select`] with the base taken from the top `top_fraction` of each ranking.
pub fn adaptive_select_with(
    table: &TimeSeriesTable,
    trainer: &dyn SubsetTrainer,
    rank_a: &FeatureRanking,
    rank_b: &FeatureRanking,
    top_fraction: f64,
    val_fraction: f64,
) -> Result<FeatureSet, SelectError> {
    if !(val_fraction > 0.0 && val_fraction <= 0.5) {
        return Err(SelectError::InvalidArgument(format!("val_fraction {val_fraction} not in (0, 0.5]")));
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(SelectError::InvalidArgument(format!("top_fraction {top_fraction} not in (0, 1]")));
    }
    let order = mean_rank_order(rank_a, rank_b)?;
    let table_tags = table.input_tags();
    if let Some(missing) = order.iter().find(|t| !table_tags.contains(t)) {
        return Err(SelectError::InvalidArgument(format!("ranked tag {missing} not in table")));
    }
    let n = table.len();
    let n_val = (val_fraction * n as f64).ceil() as usize;
    if n_val == 0 || n_val >= n {
        return Err(SelectError::TooFewRows { rows: n, needed: n_val + 1 });
    }
    let (train, val) = split_contiguous(table, n - n_val)?;

    let top_a: BTreeSet<String> = rank_a.top_fraction(top_fraction).into_iter().collect();
    let top_b: BTreeSet<String> = rank_b.top_fraction(top_fraction).into_iter().collect();
    let mut base: BTreeSet<String> = top_a.intersection(&top_b).cloned().collect();
    if base.is_empty() {
        base = order.iter().take(FALLBACK_BASE_SIZE).cloned().collect();
    }
    let in_table_order = |set: &BTreeSet<String>| -> Vec<String> {
        table_tags.iter().filter(|t| set.contains(*t)).cloned().collect()
    };

    let initial_base = in_table_order(&base);
    let initial_mape = trainer.validation_mape(&train, &val, &initial_base)?;
    log::info!("initial base of {} tags, validation MAPE {initial_mape:.4}%", initial_base.len());
    let mut current = initial_mape;
    let mut history = Vec::new();
    for candidate in order.iter().filter(|t| !base.contains(*t)).cloned().collect::<Vec<_>>() {
        let mut trial = base.clone();
        trial.insert(candidate.clone());
        let mape = trainer.validation_mape(&train, &val, &in_table_order(&trial))?;
        let kept = mape < current;
        log::debug!("candidate {candidate}: {current:.4}% -> {mape:.4}% kept={kept}");
        history.push(Decision { candidate, mape_before: current, mape_after: mape, kept });
        if kept {
            base = trial;
            current = mape;
        }
    }
    Ok(FeatureSet {
        base: in_table_order(&base),
        initial_base,
        initial_mape: Some(initial_mape),
        final_mape: Some(current),
        history,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::select::{RankedTag, RankingMethod};
    use crate::timeseries::Column;

    fn ranking(method: RankingMethod, tags: &[&str]) -> FeatureRanking {
        FeatureRanking {
            method,
            entries: tags.iter().enumerate().map(|(i, t)| RankedTag { tag: t.to_string(), score: -(i as f64) }).collect(),
        }
    }

    fn table(p: usize, n: usize) -> TimeSeriesTable {
        let mut cols: Vec<Column> = (1..=p).map(|j| Column::new(format!("x{j}"), vec![j as f64; n])).collect();
        cols.push(Column::new("y", (0..n).map(|i| 100.0 + i as f64).collect()));
        TimeSeriesTable::from_columns(5, 0, cols, "y").unwrap()
    }

    /// MAPE that drops by a fixed amount per "useful" tag and rises slightly with set size.
    fn scripted(useful: &'static [&'static str]) -> impl Fn(&TimeSeriesTable, &TimeSeriesTable, &[String]) -> Result<f64, SelectError> {
        move |_, _, tags| {
            let good = tags.iter().filter(|t| useful.contains(&t.as_str())).count() as f64;
            Ok(10.0 - good + 0.01 * tags.len() as f64)
        }
    }

    #[test]
    fn identical_rankings_give_top_half_base() {
        let names = ["x3", "x1", "x5", "x2", "x4"];
        let a = ranking(RankingMethod::Lasso, &names);
        let b = ranking(RankingMethod::Relieff, &names);
        let fs = adaptive_select(&table(5, 50), &scripted(&[]), &a, &b, 0.2).unwrap();
        assert_eq!(fs.initial_base, vec!["x1", "x3", "x5"]);
        assert_eq!(fs.base, fs.initial_base);
        assert_eq!(fs.history.len(), 2);
        assert!(fs.history.iter().all(|d| !d.kept));
    }

    #[test]
    fn useful_candidate_enters_and_noise_is_rejected() {
        let a = ranking(RankingMethod::Lasso, &["x1", "x2", "x3", "x4", "x5", "x6"]);
        let b = ranking(RankingMethod::Relieff, &["x2", "x1", "x6", "x5", "x4", "x3"]);
        let fs = adaptive_select(&table(6, 60), &scripted(&["x1", "x5"]), &a, &b, 0.25).unwrap();
        assert_eq!(fs.initial_base, vec!["x1", "x2"]);
        assert_eq!(fs.base, vec!["x1", "x2", "x5"]);
        assert!(fs.final_mape.unwrap() < fs.initial_mape.unwrap());
        let kept: Vec<&str> = fs.history.iter().filter(|d| d.kept).map(|d| d.candidate.as_str()).collect();
        assert_eq!(kept, vec!["x5"]);
    }

    #[test]
    fn candidates_follow_mean_rank() {
        let a = ranking(RankingMethod::Lasso, &["x1", "x2", "x3", "x4"]);
        let b = ranking(RankingMethod::Relieff, &["x4", "x3", "x1", "x2"]);
        let fs = adaptive_select(&table(4, 40), &scripted(&[]), &a, &b, 0.2).unwrap();
        // top halves {x1,x2} and {x4,x3} are disjoint: fallback keeps every tag
        assert_eq!(fs.initial_base.len(), 4);
        assert!(fs.history.is_empty());

        let b = ranking(RankingMethod::Relieff, &["x1", "x4", "x3", "x2"]);
        let fs = adaptive_select(&table(4, 40), &scripted(&[]), &a, &b, 0.2).unwrap();
        let order: Vec<&str> = fs.history.iter().map(|d| d.candidate.as_str()).collect();
        // sums: x2 = 1+3, x3 = 2+2, x4 = 3+1; ties broken by first ranking
        assert_eq!(order, vec!["x2", "x3", "x4"]);
    }

    #[test]
    fn evaluation_count_and_monotone_mape() {
        let calls = AtomicUsize::new(0);
        let trainer = |_: &TimeSeriesTable, _: &TimeSeriesTable, tags: &[String]| {
            let c = calls.fetch_add(1, Ordering::SeqCst);
            Ok(((c * 7919 + tags.len() * 31) % 13) as f64)
        };
        let names: Vec<String> = (1..=9).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut rev = refs.clone();
        rev.reverse();
        rev.swap(0, 8);
        let a = ranking(RankingMethod::Lasso, &refs);
        let b = ranking(RankingMethod::Relieff, &rev);
        let fs = adaptive_select(&table(9, 80), &trainer, &a, &b, 0.5).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), fs.history.len() + 1);
        assert_eq!(fs.history.len(), 9 - fs.initial_base.len());
        assert!(fs.final_mape.unwrap() <= fs.initial_mape.unwrap());
        for d in &fs.history {
            assert_eq!(d.kept, d.mape_after < d.mape_before);
        }
        for w in fs.history.windows(2) {
            let next_before = if w[0].kept { w[0].mape_after } else { w[0].mape_before };
            assert_eq!(w[1].mape_before, next_before);
        }
    }

    #[test]
    fn argument_errors() {
        let a = ranking(RankingMethod::Lasso, &["x1", "x2"]);
        let b = ranking(RankingMethod::Relieff, &["x1", "x3"]);
        let t = table(3, 20);
        assert!(matches!(adaptive_select(&t, &scripted(&[]), &a, &b, 0.2), Err(SelectError::RankingMismatch)));
        assert!(matches!(adaptive_select(&t, &scripted(&[]), &a, &a, 0.6), Err(SelectError::InvalidArgument(_))));
        assert!(matches!(adaptive_select(&t, &scripted(&[]), &a, &a, 0.0), Err(SelectError::InvalidArgument(_))));
    }

    #[test]
    fn csv_and_report() {
        let a = ranking(RankingMethod::Lasso, &["x1", "x2"]);
        let fs = adaptive_select(&table(2, 20), &scripted(&["x2"]), &a, &a, 0.2).unwrap();
        let mut buf = Vec::new();
        fs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,candidate,mape_before,mape_after,kept\n0,,,"));
        assert!(text.contains("1,x2,"));
        assert!(fs.report().contains("final base (2): x1, x2"));
    }
}
