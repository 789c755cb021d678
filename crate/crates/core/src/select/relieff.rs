//! ReliefF weights for a continuous target discretized into equal-frequency classes.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{FeatureRanking, RankedTag, RankingMethod, SelectError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliefOptions {
    /// Nearest neighbors per class.
    pub k: usize,
    /// Number of sampled instances.
    pub m: usize,
    /// Number of equal-frequency target classes.
    pub classes: usize,
    pub seed: u64,
}

impl Default for ReliefOptions {
    fn default() -> Self {
        Self { k: 10, m: 400, classes: 5, seed: 0 }
    }
}

/// Equal-frequency class labels; a value equal to an edge takes the lower class.
fn discretize(y: &[f64], classes: usize) -> Vec<usize> {
    let n = y.len();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..classes).map(|j| sorted[(j * n).div_ceil(classes) - 1]).collect();
    y.iter().map(|v| edges.partition_point(|e| e < v)).collect()
}

/// Features rescaled to [0, 1] per column; constant columns become zeros.
fn unit_scale(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let lo = col.min();
        let hi = col.max();
        let span = hi - lo;
        for v in col.iter_mut() {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    out
}

/// ReliefF feature weights, ranked descending.
///
/// For each of `m` sampled instances R, the `k` nearest same-class hits lower
/// every weight by `diff / (m k)`; the `k` nearest misses of every other class
/// C raise it by `p(C) / (1 - p(class R)) * diff / (m k)`. Distances are
/// Manhattan on [0, 1]-scaled features, and ties go to the lower row index.
pub fn relieff_rank(
    x: &DMatrix<f64>,
    y: &[f64],
    tags: &[String],
    opts: &ReliefOptions,
) -> Result<(FeatureRanking, Vec<f64>), SelectError> {
    let (n, p) = x.shape();
    if tags.len() != p || y.len() != n {
        return Err(SelectError::Dimension(format!("{n}x{p} design, {} tags, {} targets", tags.len(), y.len())));
    }
    if opts.k == 0 || opts.classes < 2 {
        return Err(SelectError::InvalidArgument(format!("k {} and classes {} must be >= 1 and >= 2", opts.k, opts.classes)));
    }
    if n < opts.k + 1 {
        return Err(SelectError::TooFewRows { rows: n, needed: opts.k + 1 });
    }
    if opts.m == 0 || opts.m > n {
        return Err(SelectError::InvalidArgument(format!("m {} must be in 1..={n}", opts.m)));
    }

    let labels = discretize(y, opts.classes);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut class_counts = vec![0usize; n_classes];
    for &c in &labels {
        class_counts[c] += 1;
    }
    if class_counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(SelectError::ConstantTarget);
    }
    let prior: Vec<f64> = class_counts.iter().map(|&c| c as f64 / n as f64).collect();

    let xs = unit_scale(x);
    // row-major copy for distance scans
    let rows: Vec<f64> = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| xs[(i, j)]).collect();
    let row = |i: usize| &rows[i * p..(i + 1) * p];

    let mut rng = seed::rng(opts.seed);
    let picks = sample(&mut rng, n, opts.m).into_vec();
    let denom = (opts.m * opts.k) as f64;
    let mut weights = vec![0.0f64; p];
    let mut by_class: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n_classes];

    for &r in &picks {
        let target = row(r);
        for list in by_class.iter_mut() {
            list.clear();
        }
        for i in (0..n).filter(|&i| i != r) {
            let d: f64 = row(i).iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
            by_class[labels[i]].push((d, i));
        }
        let own = labels[r];
        for (c, list) in by_class.iter_mut().enumerate() {
            if list.is_empty() {
                continue;
            }
            let k = opts.k.min(list.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < list.len() {
                list.select_nth_unstable_by(k - 1, cmp);
            }
            let neighbors = &list[..k];
            let factor = if c == own { -1.0 } else { prior[c] / (1.0 - prior[own]) };
            for &(_, i) in neighbors {
                for (w, (a, b)) in weights.iter_mut().zip(row(i).iter().zip(target)) {
                    *w += factor * (a - b).abs() / denom;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let ranking = FeatureRanking {
        method: RankingMethod::Relieff,
        entries: order.into_iter().map(|j| RankedTag { tag: tags[j].clone(), score: weights[j] }).collect(),
    };
    Ok((ranking, weights))
}
