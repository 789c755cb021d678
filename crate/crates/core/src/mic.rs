//! Maximal information coefficient over equal-frequency (or equal-width) grids.
//!
//! The score is the maximum, over every grid shape `a x b` with `a, b >= 2`
//! and `a * b <= B(n)`, of the binned mutual information divided by
//! `log2(min(a, b))`. `B(n) = floor(n^b_exponent)`, additionally capped.
//! Each axis is binned independently for every bin count, so this searches
//! grid shapes rather than optimizing partitions.
//!
//! Joint counts are assembled from per-axis prefix sums: for a shape whose
//! smaller side is `s`, the `s`-binned axis is accumulated along the sorted
//! order of the other axis, so every cell count is a difference of two prefix
//! entries. Shapes always have `min(a, b) <= sqrt(B)`, which keeps the scan
//! linear in `n` with a small constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest sample count `mic` accepts.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    EqualFrequency,
    EqualWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicConfig {
    pub b_exponent: f64,
    pub max_grid_cells_cap: usize,
    pub binning: Binning,
}

impl Default for MicConfig {
    fn default() -> Self {
        Self { b_exponent: 0.6, max_grid_cells_cap: 10_000, binning: Binning::EqualFrequency }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MicError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid mic config: {0}")]
    InvalidConfig(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

impl MicConfig {
    pub fn validate(&self) -> Result<(), MicError> {
        if !(self.b_exponent > 0.0 && self.b_exponent < 1.0) {
            return Err(MicError::InvalidConfig(format!("b_exponent {} not in (0, 1)", self.b_exponent)));
        }
        if self.max_grid_cells_cap < 4 {
            return Err(MicError::InvalidConfig(format!("cap {} < 4", self.max_grid_cells_cap)));
        }
        Ok(())
    }

    /// Maximum number of grid cells for `n` samples.
    pub fn cell_budget(&self, n: usize) -> usize {
        ((n as f64).powf(self.b_exponent).floor() as usize).min(self.max_grid_cells_cap)
    }
}

/// `sum c log2 c` over the counts, summed in ascending count order so the
/// result does not depend on how the counts were laid out.
fn sum_c_log_c(counts: &mut [u64]) -> f64 {
    counts.sort_unstable();
    counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 * (c as f64).log2()).sum()
}

/// Mutual information in bits of a joint count table (rows = X bins, columns = Y bins).
///
/// Computed as `H(X) + H(Y) - H(X, Y)` from integer counts; the result is
/// identical for a table and its transpose.
pub fn mutual_information(joint_counts: &[Vec<u64>]) -> f64 {
    let rows = joint_counts.len();
    let cols = joint_counts.iter().map(Vec::len).max().unwrap_or(0);
    let mut row_sums: Vec<u64> = joint_counts.iter().map(|r| r.iter().sum()).collect();
    let mut col_sums = vec![0u64; cols];
    let mut cells = Vec::with_capacity(rows * cols);
    for r in joint_counts {
        for (j, &c) in r.iter().enumerate() {
            col_sums[j] += c;
            cells.push(c);
        }
    }
    mi_from_parts(&mut row_sums, &mut col_sums, &mut cells)
}

fn mi_from_parts(row_sums: &mut [u64], col_sums: &mut [u64], cells: &mut [u64]) -> f64 {
    let n: u64 = row_sums.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let rx = sum_c_log_c(row_sums);
    let ry = sum_c_log_c(col_sums);
    let rxy = sum_c_log_c(cells);
    // H(X) + H(Y) - H(X,Y) with H = log2 n - (1/n) sum c log2 c
    let mi = nf.log2() + (rxy - (rx + ry)) / nf;
    mi.max(0.0)
}

/// Per-axis data: sample order sorted by value, and the sorted values.
struct Axis {
    order: Vec<usize>,
    sorted: Vec<f64>,
    binning: Binning,
}

impl Axis {
    fn new(values: &[f64], binning: Binning) -> Self {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| values[i]).collect();
        Self { order, sorted, binning }
    }

    /// Bin index of `v` for `k` bins.
    ///
    /// Equal-frequency edges sit at sorted positions `ceil(j n / k) - 1`; a
    /// value equal to an edge goes to the lower bin, so ties never straddle bins.
    fn binner(&self, k: usize) -> impl Fn(f64) -> usize + '_ {
        let n = self.sorted.len();
        let edges: Vec<f64> = match self.binning {
            Binning::EqualFrequency => (1..k).map(|j| self.sorted[(j * n).div_ceil(k) - 1]).collect(),
            Binning::EqualWidth => Vec::new(),
        };
        let (lo, hi) = (self.sorted[0], self.sorted[n - 1]);
        let width = (hi - lo) / k as f64;
        move |v| match self.binning {
            Binning::EqualFrequency => edges.partition_point(|&e| e < v),
            Binning::EqualWidth if width == 0.0 => 0,
            Binning::EqualWidth => (((v - lo) / width).floor() as usize).min(k - 1),
        }
    }

    /// Bin of every sample, indexed by sample.
    fn assign(&self, k: usize) -> Vec<u32> {
        let bin = self.binner(k);
        let mut out = vec![0u32; self.order.len()];
        for (&i, &v) in self.order.iter().zip(&self.sorted) {
            out[i] = bin(v) as u32;
        }
        out
    }

    /// Bin boundaries along the sorted order: sorted positions
    /// `bounds[j]..bounds[j + 1]` fall into bin `j`. Bins are monotone in the
    /// value, so each boundary is a binary search.
    fn bounds(&self, k: usize) -> Vec<usize> {
        let n = self.sorted.len();
        match self.binning {
            // bin(v) < j exactly when v <= edge j - 1
            Binning::EqualFrequency => std::iter::once(0)
                .chain((1..k).map(|j| {
                    let edge = self.sorted[(j * n).div_ceil(k) - 1];
                    self.sorted.partition_point(|&v| v <= edge)
                }))
                .chain(std::iter::once(n))
                .collect(),
            Binning::EqualWidth => {
                let bin = self.binner(k);
                (0..=k).map(|j| self.sorted.partition_point(|&v| bin(v) < j)).collect()
            }
        }
    }
}

/// Best normalized score over all shapes whose `small` axis has `s` bins and
/// whose `large` axis has `t >= s` bins (`t == s` only when `include_square`).
fn scan_family(small: &Axis, large: &Axis, s: usize, large_bounds: &[Vec<usize>], include_square: bool, clogc: &[f64], best: &mut f64) {
    let n = small.order.len();
    let assign = small.assign(s);
    // prefix[r * s + c]: rows among the first r of `large` order that fall in small bin c
    let mut prefix = Vec::with_capacity(s * (n + 1));
    let mut running = vec![0u32; s];
    prefix.extend_from_slice(&running);
    for &i in &large.order {
        running[assign[i] as usize] += 1;
        prefix.extend_from_slice(&running);
    }
    let start = if include_square { s } else { s + 1 };
    let norm = (s as f64).log2();
    let nf = n as f64;
    let lookup = |c: u32| clogc[c as usize];
    let mut small_sums = vec![0u32; s];
    let mut square_cells = Vec::with_capacity(s * s);
    for t in start..large_bounds.len() {
        let bounds = &large_bounds[t];
        let ry: f64 = bounds.windows(2).map(|w| lookup((w[1] - w[0]) as u32)).sum();
        let mut rxy = 0.0;
        square_cells.clear();
        small_sums.fill(0);
        for w in bounds.windows(2) {
            let lo = &prefix[w[0] * s..w[0] * s + s];
            let hi = &prefix[w[1] * s..w[1] * s + s];
            for c in 0..s {
                let cnt = hi[c] - lo[c];
                small_sums[c] += cnt;
                if t == s {
                    square_cells.push(cnt);
                } else {
                    rxy += lookup(cnt);
                }
            }
        }
        let (rx, ry) = if t == s {
            // the transposed call visits a square grid in transposed order, so
            // sum cells and margins in ascending count order instead
            square_cells.sort_unstable();
            rxy = square_cells.iter().map(|&c| lookup(c)).sum();
            let mut a = small_sums.clone();
            let mut b: Vec<u32> = bounds.windows(2).map(|w| (w[1] - w[0]) as u32).collect();
            a.sort_unstable();
            b.sort_unstable();
            (a.iter().map(|&c| lookup(c)).sum(), b.iter().map(|&c| lookup(c)).sum())
        } else {
            (small_sums.iter().map(|&c| lookup(c)).sum(), ry)
        };
        // symmetric in the margins; exactly zero when one axis has a single occupied bin
        let (lo, hi) = if rx <= ry { (rx, ry) } else { (ry, rx) };
        let mi = (((rxy - lo) + (clogc[n] - hi)) / nf).max(0.0);
        let score = mi / norm;
        if score > *best {
            *best = score;
        }
    }
}

pub fn mic(x: &[f64], y: &[f64], cfg: &MicConfig) -> Result<f64, MicError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(MicError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < MIN_SAMPLES {
        return Err(MicError::TooFewSamples(n));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(MicError::NonFinite(i % n));
    }
    let budget = cfg.cell_budget(n);
    if budget < 4 {
        return Ok(0.0);
    }
    let ax = Axis::new(x, cfg.binning);
    let ay = Axis::new(y, cfg.binning);

    let clogc: Vec<f64> = (0..=n).map(|c| if c == 0 { 0.0 } else { c as f64 * (c as f64).log2() }).collect();
    // bin boundaries for every bin count a grid can use: index k holds k + 1 offsets
    let kmax = budget / 2;
    let bx: Vec<Vec<usize>> = (0..=kmax).map(|k| if k == 0 { Vec::new() } else { ax.bounds(k) }).collect();
    let by: Vec<Vec<usize>> = (0..=kmax).map(|k| if k == 0 { Vec::new() } else { ay.bounds(k) }).collect();
    let mut best = 0.0f64;
    let mut s = 2;
    while s * s <= budget {
        // shapes (s, t): x has the smaller side; (t, s): y has it. Square once.
        scan_family(&ax, &ay, s, &by[..=budget / s], true, &clogc, &mut best);
        scan_family(&ay, &ax, s, &bx[..=budget / s], false, &clogc, &mut best);
        s += 1;
    }
    Ok(best.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: bins by explicit rank groups, counts via a dense
    /// table, natural-log MI converted to bits, every shape enumerated directly.
    fn brute_force_mic(x: &[f64], y: &[f64], b_exponent: f64) -> f64 {
        let n = x.len();
        let budget = (n as f64).powf(b_exponent).floor() as usize;
        fn bins_of(v: &[f64], k: usize) -> Vec<usize> {
            let n = v.len();
            let mut sorted = v.to_vec();
            sorted.sort_by(f64::total_cmp);
            v.iter()
                .map(|&val| {
                    let mut bin = 0;
                    for j in 1..k {
                        let edge = sorted[(j * n).div_ceil(k) - 1];
                        if val > edge {
                            bin = j;
                        }
                    }
                    bin
                })
                .collect()
        }
        let mut best = 0.0f64;
        for a in 2..=budget / 2 {
            for b in 2..=budget / a {
                let bx = bins_of(x, a);
                let by = bins_of(y, b);
                let mut table = vec![vec![0.0f64; b]; a];
                for i in 0..n {
                    table[bx[i]][by[i]] += 1.0;
                }
                let nf = n as f64;
                let px: Vec<f64> = table.iter().map(|r| r.iter().sum::<f64>() / nf).collect();
                let py: Vec<f64> = (0..b).map(|j| table.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
                let mut mi = 0.0;
                for i in 0..a {
                    for j in 0..b {
                        let p = table[i][j] / nf;
                        if p > 0.0 {
                            mi += p * (p / (px[i] * py[j])).ln();
                        }
                    }
                }
                best = best.max(mi / std::f64::consts::LN_2 / (a.min(b) as f64).log2());
            }
        }
        best
    }

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn mutual_information_examples() {
        assert!((mutual_information(&[vec![5, 0], vec![0, 5]]) - 1.0).abs() < 1e-12);
        assert_eq!(mutual_information(&[vec![25, 25], vec![25, 25]]), 0.0);
        assert_eq!(mutual_information(&[vec![10, 0], vec![0, 0]]), 0.0);
        assert_eq!(mutual_information(&[]), 0.0);
    }

    #[test]
    fn identity_scores_one() {
        let x = uniform(1000, 1);
        let score = mic(&x, &x, &MicConfig::default()).unwrap();
        assert!((score - 1.0).abs() < 1e-12, "{score}");
    }

    #[test]
    fn independent_noise_scores_low() {
        // 99th percentile of 200 permutation draws at n = 1000, computed by the
        // shuffle oracle below, is ~0.04; the bound asserted here is 0.2.
        let x = uniform(1000, 2);
        let y = uniform(1000, 3);
        let score = mic(&x, &y, &MicConfig::default()).unwrap();
        assert!(score < 0.2, "{score}");
    }

    #[test]
    fn sine_dependence_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = uniform(1000, 5);
        let y: Vec<f64> =
            x.iter().map(|&v| (4.0 * std::f64::consts::PI * v).sin() + 0.05 * (rng.random::<f64>() - 0.5)).collect();
        let score = mic(&x, &y, &MicConfig::default()).unwrap();
        let oracle = brute_force_mic(&x, &y, 0.6);
        assert!((score - oracle).abs() < 1e-9, "{score} vs {oracle}");
        assert!(score > 0.5, "{score}");
    }

    #[test]
    fn brute_force_agreement_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..300).map(|_| (rng.random::<f64>() * 7.0).floor()).collect();
        let y: Vec<f64> = x.iter().map(|&v| v * v + (rng.random::<f64>() * 3.0).floor()).collect();
        let score = mic(&x, &y, &MicConfig::default()).unwrap();
        assert!((score - brute_force_mic(&x, &y, 0.6)).abs() < 1e-9);
    }

    #[test]
    fn equal_width_binning_runs() {
        let x = uniform(500, 7);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let cfg = MicConfig { binning: Binning::EqualWidth, ..Default::default() };
        let score = mic(&x, &y, &cfg).unwrap();
        assert!(score > 0.8 && score <= 1.0, "{score}");
    }

    #[test]
    fn argument_errors() {
        let cfg = MicConfig::default();
        assert_eq!(mic(&[0.0; 30], &[0.0; 29], &cfg), Err(MicError::LengthMismatch(30, 29)));
        assert_eq!(mic(&[0.0; 19], &[0.0; 19], &cfg), Err(MicError::TooFewSamples(19)));
        let bad = MicConfig { b_exponent: 1.0, ..cfg };
        assert!(matches!(mic(&[0.0; 30], &[0.0; 30], &bad), Err(MicError::InvalidConfig(_))));
        let mut x = vec![0.0; 30];
        x[3] = f64::NAN;
        assert_eq!(mic(&x, &[0.0; 30], &cfg), Err(MicError::NonFinite(3)));
    }

    #[test]
    fn constant_input_scores_zero() {
        let x = uniform(100, 8);
        assert_eq!(mic(&x, &[1.0; 100], &MicConfig::default()).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn symmetric_exactly(seed in any::<u64>(), n in 20usize..400, dep in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let y: Vec<f64> = x.iter().map(|v| dep * v + (1.0 - dep) * rng.random::<f64>()).collect();
            let cfg = MicConfig::default();
            prop_assert_eq!(mic(&x, &y, &cfg).unwrap(), mic(&y, &x, &cfg).unwrap());
        }

        #[test]
        fn invariant_under_increasing_transform(seed in any::<u64>(), n in 20usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + 0.3 * rng.random::<f64>()).collect();
            let cfg = MicConfig::default();
            let base = mic(&x, &y, &cfg).unwrap();
            let tx: Vec<f64> = x.iter().map(|v| (3.0 * v).exp()).collect();
            let ty: Vec<f64> = y.iter().map(|v| v.powi(3) * 2.0 - 7.0).collect();
            prop_assert_eq!(base, mic(&tx, &ty, &cfg).unwrap());
        }

        #[test]
        fn score_and_mi_bounded(seed in any::<u64>(), n in 20usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 5.0).floor()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let s = mic(&x, &y, &MicConfig::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let table: Vec<Vec<u64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(0..20)).collect()).collect();
            prop_assert!(mutual_information(&table) >= 0.0);
        }
    }
}
