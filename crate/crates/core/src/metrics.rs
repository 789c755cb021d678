//! MAPE, MAE, NMSE and R² in physical units, plus the absolute-error histogram.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {measured} measured vs {predicted} predicted")]
    LengthMismatch { measured: usize, predicted: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("nonpositive {which} value {value} at index {index}")]
    NonPositive { which: &'static str, index: usize, value: f64 },
    #[error("measured values are constant; R² undefined")]
    ConstantMeasured,
    #[error("bin width {0} must be positive")]
    BadBinWidth(f64),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent.
    pub mape: f64,
    pub mae: f64,
    /// Mean of (ŷ - y)² / (y ŷ).
    pub nmse: f64,
    pub r2: f64,
    pub n: usize,
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != y_hat.len() {
        return Err(MetricsError::LengthMismatch { measured: y.len(), predicted: y_hat.len() });
    }
    Ok(())
}

/// All four metrics; requires strictly positive `y` and `y_hat` and non-constant `y`.
pub fn evaluate(y: &[f64], y_hat: &[f64]) -> Result<EvalReport, MetricsError> {
    check_lengths(y, y_hat)?;
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (which, values) in [("measured", y), ("predicted", y_hat)] {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(MetricsError::NonPositive { which, index, value });
        }
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (mean - v).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantMeasured);
    }
    let (mut ape, mut ae, mut nse, mut sse) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &p) in y.iter().zip(y_hat) {
        let d = p - a;
        ape += d.abs() / a;
        ae += d.abs();
        nse += d * d / (a * p);
        sse += d * d;
    }
    Ok(EvalReport { mape: 100.0 * ape / n, mae: ae / n, nmse: nse / n, r2: 1.0 - sse / ss_tot, n: y.len() })
}

/// MAPE (%) alone; only the measured values must be positive.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(y, y_hat)?;
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(MetricsError::NonPositive { which: "measured", index, value });
    }
    Ok(100.0 * y.iter().zip(y_hat).map(|(a, p)| (a - p).abs() / a).sum::<f64>() / y.len() as f64)
}

/// Counts of |y - ŷ| in left-closed bins `[k w, (k + 1) w)` from 0 up to the
/// largest occupied bin; interior empty bins are kept with count 0.
pub fn abs_error_histogram(y: &[f64], y_hat: &[f64], bin_width: f64) -> Result<Vec<(f64, usize)>, MetricsError> {
    check_lengths(y, y_hat)?;
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(MetricsError::BadBinWidth(bin_width));
    }
    let bins: Vec<usize> = y.iter().zip(y_hat).map(|(a, p)| ((a - p).abs() / bin_width).floor() as usize).collect();
    let Some(&top) = bins.iter().max() else {
        return Ok(Vec::new());
    };
    let mut counts = vec![0usize; top + 1];
    for b in bins {
        counts[b] += 1;
    }
    Ok(counts.into_iter().enumerate().map(|(k, c)| (k as f64 * bin_width, c)).collect())
}

/// One labeled metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub model: String,
    pub stage: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

pub const METRICS_HEADER: [&str; 8] = ["dataset", "model", "stage", "mape", "mae", "nmse", "r2", "n"];

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.stage.clone(),
            r.report.mape.to_string(),
            r.report.mae.to_string(),
            r.report.nmse.to_string(),
            r.report.r2.to_string(),
            r.report.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NAN);
        out.push(MetricsRow {
            dataset: rec.get(0).unwrap_or_default().to_string(),
            model: rec.get(1).unwrap_or_default().to_string(),
            stage: rec.get(2).unwrap_or_default().to_string(),
            report: EvalReport {
                mape: num(3),
                mae: num(4),
                nmse: num(5),
                r2: num(6),
                n: rec.get(7).and_then(|s| s.parse().ok()).unwrap_or(0),
            },
        });
    }
    Ok(out)
}

/// A histogram labeled by model and stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledHistogram {
    pub model: String,
    pub stage: String,
    pub bins: Vec<(f64, usize)>,
}

pub fn write_histogram_csv<W: Write>(hists: &[LabeledHistogram], bin_width: f64, writer: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "stage", "bin_lower", "bin_upper", "count"])?;
    for h in hists {
        for &(lo, c) in &h.bins {
            w.write_record([h.model.clone(), h.stage.clone(), lo.to_string(), (lo + bin_width).to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_example() {
        let r = evaluate(&[100.0, 200.0], &[110.0, 180.0]).unwrap();
        // errors 10 and 20; relative 0.1 and 0.1
        assert!((r.mape - 10.0).abs() < 1e-9);
        assert!((r.mae - 15.0).abs() < 1e-9);
        assert!((r.r2 - 0.9).abs() < 1e-9);
        let nmse = (100.0 / 11000.0 + 400.0 / 36000.0) / 2.0;
        assert!((r.nmse - nmse).abs() < 1e-9);
        assert!((r.nmse - 0.010101).abs() < 1e-5);
        assert_eq!(r.n, 2);
    }

    #[test]
    fn perfect_prediction_is_exact() {
        let y = [3.0, 9.5, 4.25, 7.0];
        let r = evaluate(&y, &y).unwrap();
        assert_eq!((r.mape, r.mae, r.nmse, r.r2), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let y = [2.0, 4.0, 9.0];
        let m = 5.0;
        assert_eq!(evaluate(&y, &[m; 3]).unwrap().r2, 0.0);
    }

    #[test]
    fn guards() {
        assert!(matches!(evaluate(&[1.0, 0.0], &[1.0, 1.0]), Err(MetricsError::NonPositive { which: "measured", index: 1, .. })));
        assert!(matches!(evaluate(&[1.0, 2.0], &[1.0, -1.0]), Err(MetricsError::NonPositive { which: "predicted", .. })));
        assert!(matches!(evaluate(&[2.0, 2.0], &[1.0, 3.0]), Err(MetricsError::ConstantMeasured)));
        assert!(matches!(evaluate(&[], &[]), Err(MetricsError::Empty)));
        assert!(matches!(evaluate(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(abs_error_histogram(&[1.0], &[1.0], 0.0), Err(MetricsError::BadBinWidth(_))));
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(abs_error_histogram(&[10.0, 20.0, 30.0], &[11.0, 26.0, 23.0], 5.0).unwrap(), vec![(0.0, 1), (5.0, 2)]);
        assert_eq!(abs_error_histogram(&[4.0; 6], &[4.0; 6], 5.0).unwrap(), vec![(0.0, 6)]);
        assert!(abs_error_histogram(&[], &[], 5.0).unwrap().is_empty());
        // left-closed: an error of exactly 5 lands in [5, 10)
        assert_eq!(abs_error_histogram(&[0.0, 0.0], &[5.0, 16.0], 5.0).unwrap(), vec![(0.0, 0), (5.0, 1), (10.0, 0), (15.0, 1)]);
    }

    #[test]
    fn mape_only_needs_positive_measurements() {
        assert!((mape(&[100.0, 200.0], &[110.0, -20.0]).unwrap() - 60.0).abs() < 1e-12);
        assert!(matches!(mape(&[0.0], &[1.0]), Err(MetricsError::NonPositive { .. })));
    }

    #[test]
    fn histogram_csv_layout() {
        let h = LabeledHistogram { model: "full".into(), stage: "elm".into(), bins: vec![(0.0, 3), (5.0, 1)] };
        let mut buf = Vec::new();
        write_histogram_csv(&[h], 5.0, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "model,stage,bin_lower,bin_upper,count\nfull,elm,0,5,3\nfull,elm,5,10,1\n");
    }

    #[test]
    fn metrics_csv_round_trip() {
        let row = MetricsRow {
            dataset: "d1".into(),
            model: "ec_elm".into(),
            stage: "final".into(),
            report: evaluate(&[100.0, 200.0], &[110.0, 180.0]).unwrap(),
        };
        let mut buf = Vec::new();
        write_metrics_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        assert!(buf.starts_with(b"dataset,model,stage,mape,mae,nmse,r2,n\n"));
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), vec![row]);
    }

    fn positive_pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((1.0f64..500.0, 1.0f64..500.0), 2..60)
            .prop_filter("non-constant", |v| v.iter().any(|p| p.0 != v[0].0))
    }

    proptest! {
        #[test]
        fn scale_covariance(pairs in positive_pairs(), c in 0.01f64..100.0) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = evaluate(&y, &p).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let b = evaluate(&ys, &ps).unwrap();
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * u.abs().max(v.abs()).max(1.0);
            prop_assert!(close(a.mape, b.mape));
            prop_assert!(close(a.nmse, b.nmse));
            prop_assert!(close(a.r2, b.r2));
            prop_assert!(close(a.mae * c, b.mae));
            prop_assert!(a.r2 <= 1.0);
        }

        #[test]
        fn permutation_invariance(pairs in positive_pairs(), shift in 0usize..60) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let k = shift % y.len();
            let mut rot = pairs.clone();
            rot.rotate_left(k);
            rot.reverse();
            let (yr, pr): (Vec<f64>, Vec<f64>) = rot.into_iter().unzip();
            let (a, b) = (evaluate(&y, &p).unwrap(), evaluate(&yr, &pr).unwrap());
            prop_assert!((a.mape - b.mape).abs() < 1e-9);
            prop_assert!((a.mae - b.mae).abs() < 1e-9);
        }

        #[test]
        fn histogram_conserves_counts(pairs in prop::collection::vec((0.0f64..300.0, 0.0f64..300.0), 0..80), w in 0.01f64..40.0) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let h = abs_error_histogram(&y, &p, w).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), y.len());
        }
    }
}
