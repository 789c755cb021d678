//! Extreme learning machine: random frozen hidden layer, ridge least-squares readout.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum ElmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElmConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub ridge: f64,
}

impl Default for ElmConfig {
    fn default() -> Self {
        Self { hidden: 100, activation: Activation::Sigmoid, ridge: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ElmFile", try_from = "ElmFile")]
pub struct ElmModel {
    /// L x n
    input_weights: DMatrix<f64>,
    biases: DVector<f64>,
    /// L x m
    output_weights: DMatrix<f64>,
    activation: Activation,
    seed: u64,
    input_tags: Vec<String>,
    ridge: f64,
}

impl ElmModel {
    /// Assembles a model from explicit weights, checking shapes and finiteness.
    pub fn from_parts(
        input_weights: DMatrix<f64>,
        biases: DVector<f64>,
        output_weights: DMatrix<f64>,
        activation: Activation,
        seed: u64,
        input_tags: Vec<String>,
        ridge: f64,
    ) -> Result<Self, ElmError> {
        let (l, n) = input_weights.shape();
        if l == 0 || biases.len() != l || output_weights.nrows() != l || output_weights.ncols() == 0 {
            return Err(ElmError::Dimension(format!(
                "omega {l}x{n}, {} biases, beta {}x{}",
                biases.len(),
                output_weights.nrows(),
                output_weights.ncols()
            )));
        }
        if input_tags.len() != n {
            return Err(ElmError::Dimension(format!("{} input tags for {n} weight columns", input_tags.len())));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(input_weights.as_slice()) || !finite(biases.as_slice()) || !finite(output_weights.as_slice()) {
            return Err(ElmError::NonFinite("model weights"));
        }
        if !(ridge >= 0.0) {
            return Err(ElmError::InvalidConfig(format!("ridge {ridge} < 0")));
        }
        Ok(Self { input_weights, biases, output_weights, activation, seed, input_tags, ridge })
    }

    pub fn hidden(&self) -> usize {
        self.input_weights.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_weights.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_weights.ncols()
    }

    pub fn input_tags(&self) -> &[String] {
        &self.input_tags
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.input_weights
    }

    pub fn biases(&self) -> &DVector<f64> {
        &self.biases
    }

    pub fn output_weights(&self) -> &DMatrix<f64> {
        &self.output_weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn hidden_row(&self, x: &[f64], out: &mut [f64]) {
        for (i, h) in out.iter_mut().enumerate() {
            let mut z = self.biases[i];
            for (j, xj) in x.iter().enumerate() {
                z += self.input_weights[(i, j)] * xj;
            }
            *h = self.activation.apply(z);
        }
    }

    /// Output for a single feature row.
    pub fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>, ElmError> {
        if x.len() != self.n_inputs() {
            return Err(ElmError::Dimension(format!("row has {} features, model expects {}", x.len(), self.n_inputs())));
        }
        let mut h = vec![0.0; self.hidden()];
        self.hidden_row(x, &mut h);
        Ok(self.readout(&h))
    }

    fn readout(&self, h: &[f64]) -> Vec<f64> {
        (0..self.n_outputs())
            .map(|k| h.iter().enumerate().map(|(i, hi)| self.output_weights[(i, k)] * hi).sum())
            .collect()
    }

    /// Outputs for every row of `x` (N x n), as N x m.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ElmError> {
        if x.ncols() != self.n_inputs() {
            return Err(ElmError::Dimension(format!("{} features, model expects {}", x.ncols(), self.n_inputs())));
        }
        let h = self.hidden_matrix(x);
        let mut out = DMatrix::zeros(x.nrows(), self.n_outputs());
        for t in 0..x.nrows() {
            let row: Vec<f64> = h.row(t).iter().copied().collect();
            for (k, v) in self.readout(&row).into_iter().enumerate() {
                out[(t, k)] = v;
            }
        }
        Ok(out)
    }

    /// Single-output convenience: first output column of `predict`.
    pub fn predict_column(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, ElmError> {
        Ok(self.predict(x)?.column(0).iter().copied().collect())
    }

    fn hidden_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(x.nrows(), self.hidden());
        let mut xrow = vec![0.0; x.ncols()];
        let mut hrow = vec![0.0; self.hidden()];
        for t in 0..x.nrows() {
            for (j, v) in xrow.iter_mut().enumerate() {
                *v = x[(t, j)];
            }
            self.hidden_row(&xrow, &mut hrow);
            for (i, v) in hrow.iter().enumerate() {
                h[(t, i)] = *v;
            }
        }
        h
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), ElmError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ElmError> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// Spectral factors of H; enough to solve for any ridge.
enum Factored {
    /// Thin SVD: V (L x r), singular values, U' Y and the rank cutoff.
    Svd { v: DMatrix<f64>, s: DVector<f64>, uty: DMatrix<f64>, cutoff: f64 },
    /// Eigenpairs of H'H with V' H' Y; only used when every ridge is positive.
    Gram { v: DMatrix<f64>, e: DVector<f64>, vthy: DMatrix<f64> },
}

impl Factored {
    fn new(h: DMatrix<f64>, y: &DMatrix<f64>, positive_ridges: bool) -> Self {
        let (n, l) = h.shape();
        if positive_ridges && n >= 2 * l {
            let eig = (h.transpose() * &h).symmetric_eigen();
            let vthy = eig.eigenvectors.transpose() * (h.transpose() * y);
            let e = eig.eigenvalues.map(|e| e.max(0.0));
            return Factored::Gram { v: eig.eigenvectors, e, vthy };
        }
        let cut_scale = f64::EPSILON * n.max(l) as f64;
        let (svd, c) = if n >= l {
            // QR first keeps the SVD at L x L
            let qr = h.qr();
            let mut c = y.clone();
            qr.q_tr_mul(&mut c);
            (qr.r().svd(true, true), c.rows(0, l).into_owned())
        } else {
            (h.svd(true, true), y.clone())
        };
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v requested").transpose();
        let s = svd.singular_values;
        let cutoff = cut_scale * s.max();
        Factored::Svd { v, uty: u.transpose() * c, s, cutoff }
    }

    /// Minimizer of ||H b - Y||^2 + ridge ||b||^2; at ridge 0 the minimum-norm
    /// solution with singular values below the rank cutoff dropped.
    fn solve(&self, ridge: f64) -> DMatrix<f64> {
        let (v, proj, filter) = match self {
            Factored::Svd { v, s, uty, cutoff } => (
                v,
                uty,
                s.map(|s| {
                    if ridge > 0.0 {
                        s / (s * s + ridge)
                    } else if s > *cutoff {
                        1.0 / s
                    } else {
                        0.0
                    }
                }),
            ),
            Factored::Gram { v, e, vthy } => (v, vthy, e.map(|e| 1.0 / (e + ridge))),
        };
        let mut scaled = proj.clone();
        for (mut row, f) in scaled.row_iter_mut().zip(filter.iter()) {
            row *= *f;
        }
        v * scaled
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>, hidden: usize, tags: &[String]) -> Result<(), ElmError> {
    if hidden == 0 {
        return Err(ElmError::InvalidConfig("hidden count must be >= 1".into()));
    }
    if x.nrows() != y.nrows() || x.nrows() == 0 || y.ncols() == 0 {
        return Err(ElmError::Dimension(format!("X {}x{}, Y {}x{}", x.nrows(), x.ncols(), y.nrows(), y.ncols())));
    }
    if tags.len() != x.ncols() {
        return Err(ElmError::Dimension(format!("{} tags for {} feature columns", tags.len(), x.ncols())));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(ElmError::NonFinite("X"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(ElmError::NonFinite("Y"));
    }
    Ok(())
}

/// Hidden parameters for `seed`: omega row-major, then biases, all uniform on [-1, 1].
fn draw_hidden(hidden: usize, n_inputs: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = seed::rng(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let omega_rm: Vec<f64> = (0..hidden * n_inputs).map(|_| dist.sample(&mut rng)).collect();
    let omega = DMatrix::from_row_slice(hidden, n_inputs, &omega_rm);
    let biases = DVector::from_iterator(hidden, (0..hidden).map(|_| dist.sample(&mut rng)));
    (omega, biases)
}

/// Trains one model per ridge value on a shared hidden layer (one factorization).
pub fn elm_train_path(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hidden: usize,
    activation: Activation,
    ridges: &[f64],
    seed: u64,
    input_tags: &[String],
) -> Result<Vec<ElmModel>, ElmError> {
    check_inputs(x, y, hidden, input_tags)?;
    let (omega, biases) = draw_hidden(hidden, x.ncols(), seed);
    fit_path(x, y, omega, biases, activation, ridges, seed, input_tags)
}

#[allow(clippy::too_many_arguments)]
fn fit_path(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    omega: DMatrix<f64>,
    biases: DVector<f64>,
    activation: Activation,
    ridges: &[f64],
    seed: u64,
    input_tags: &[String],
) -> Result<Vec<ElmModel>, ElmError> {
    if let Some(r) = ridges.iter().find(|r| !(**r >= 0.0)) {
        return Err(ElmError::InvalidConfig(format!("ridge {r} < 0")));
    }
    let hidden = omega.nrows();
    let shell = ElmModel {
        input_weights: omega,
        biases,
        output_weights: DMatrix::zeros(hidden, y.ncols()),
        activation,
        seed,
        input_tags: input_tags.to_vec(),
        ridge: 0.0,
    };
    let factored = Factored::new(shell.hidden_matrix(x), y, ridges.iter().all(|r| *r > 0.0));
    ridges
        .iter()
        .map(|&ridge| {
            let beta = factored.solve(ridge);
            if !beta.iter().all(|v| v.is_finite()) {
                return Err(ElmError::NonFinite("output weights"));
            }
            Ok(ElmModel { output_weights: beta, ridge, ..shell.clone() })
        })
        .collect()
}

/// Draws the hidden layer from `seed` and solves the ridge readout.
pub fn elm_train(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &ElmConfig,
    seed: u64,
    input_tags: &[String],
) -> Result<ElmModel, ElmError> {
    let mut models = elm_train_path(x, y, cfg.hidden, cfg.activation, &[cfg.ridge], seed, input_tags)?;
    Ok(models.remove(0))
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    rows: usize,
    cols: usize,
    /// row-major
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixFile {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl TryFrom<MatrixFile> for DMatrix<f64> {
    type Error = ElmError;
    fn try_from(f: MatrixFile) -> Result<Self, ElmError> {
        if f.rows * f.cols != f.data.len() {
            return Err(ElmError::Dimension(format!("{}x{} matrix with {} values", f.rows, f.cols, f.data.len())));
        }
        Ok(DMatrix::from_row_slice(f.rows, f.cols, &f.data))
    }
}

#[derive(Serialize, Deserialize)]
struct ElmFile {
    format: String,
    seed: u64,
    hidden: usize,
    n_inputs: usize,
    n_outputs: usize,
    activation: Activation,
    ridge: f64,
    input_tags: Vec<String>,
    input_weights: MatrixFile,
    biases: Vec<f64>,
    output_weights: MatrixFile,
}

const FORMAT: &str = "elm-v1";

impl From<ElmModel> for ElmFile {
    fn from(m: ElmModel) -> Self {
        Self {
            format: FORMAT.into(),
            seed: m.seed,
            hidden: m.hidden(),
            n_inputs: m.n_inputs(),
            n_outputs: m.n_outputs(),
            activation: m.activation,
            ridge: m.ridge,
            input_weights: (&m.input_weights).into(),
            biases: m.biases.iter().copied().collect(),
            output_weights: (&m.output_weights).into(),
            input_tags: m.input_tags,
        }
    }
}

impl TryFrom<ElmFile> for ElmModel {
    type Error = ElmError;
    fn try_from(f: ElmFile) -> Result<Self, ElmError> {
        if f.format != FORMAT {
            return Err(ElmError::InvalidConfig(format!("unknown model format {}", f.format)));
        }
        let omega: DMatrix<f64> = f.input_weights.try_into()?;
        let beta: DMatrix<f64> = f.output_weights.try_into()?;
        if omega.shape() != (f.hidden, f.n_inputs) || beta.shape() != (f.hidden, f.n_outputs) {
            return Err(ElmError::Dimension("header dimensions disagree with weights".into()));
        }
        ElmModel::from_parts(omega, DVector::from_vec(f.biases), beta, f.activation, f.seed, f.input_tags, f.ridge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tags(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("x{i}")).collect()
    }

    fn data(n_rows: usize, n_feat: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = seed::rng(seed);
        let x = DMatrix::from_fn(n_rows, n_feat, |_, _| rng.random::<f64>());
        let y = DMatrix::from_fn(n_rows, 1, |t, _| (3.0 * x[(t, 0)]).sin() * 0.4 + 0.5 * x[(t, n_feat - 1)] + 0.05);
        (x, y)
    }

    fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        ((a - b).norm_squared() / a.len() as f64).sqrt()
    }

    fn objective(model: &ElmModel, x: &DMatrix<f64>, y: &DMatrix<f64>, beta: &DMatrix<f64>) -> f64 {
        let h = model.hidden_matrix(x);
        (h * beta - y).norm_squared() + model.ridge * beta.norm_squared()
    }

    #[test]
    fn interpolates_when_hidden_equals_samples() {
        let (x, y) = data(30, 4, 1);
        let cfg = ElmConfig { hidden: 30, ridge: 0.0, ..Default::default() };
        let model = elm_train(&x, &y, &cfg, 7, &tags(4)).unwrap();
        let pred = model.predict(&x).unwrap();
        assert!(rmse(&pred, &y) < 1e-6, "rmse {}", rmse(&pred, &y));
    }

    #[test]
    fn interpolates_in_underdetermined_regime() {
        let (x, y) = data(20, 3, 2);
        let cfg = ElmConfig { hidden: 50, ridge: 0.0, activation: Activation::Tanh };
        let model = elm_train(&x, &y, &cfg, 3, &tags(3)).unwrap();
        assert!(rmse(&model.predict(&x).unwrap(), &y) < 1e-6);
    }

    #[test]
    fn zero_target_gives_zero_weights() {
        let (x, _) = data(40, 3, 3);
        let y = DMatrix::zeros(40, 1);
        let model = elm_train(&x, &y, &ElmConfig { hidden: 15, ..Default::default() }, 1, &tags(3)).unwrap();
        assert!(model.output_weights().iter().all(|&b| b == 0.0));
        assert!(model.predict(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let (x, y) = data(80, 5, 4);
        let cfg = ElmConfig { hidden: 25, ..Default::default() };
        let a = elm_train(&x, &y, &cfg, 11, &tags(5)).unwrap();
        let b = elm_train(&x, &y, &cfg, 11, &tags(5)).unwrap();
        assert_eq!(a, b);
        let c = elm_train(&x, &y, &cfg, 12, &tags(5)).unwrap();
        assert_ne!(a.input_weights(), c.input_weights());
    }

    #[test]
    fn ridge_shrinks_output_norm() {
        let (x, y) = data(120, 4, 5);
        let ridges = [0.0, 1e-6, 1e-4, 1e-2, 1.0, 10.0];
        let models = elm_train_path(&x, &y, 40, Activation::Sigmoid, &ridges, 9, &tags(4)).unwrap();
        for w in models.windows(2) {
            assert!(w[1].output_weights().norm() <= w[0].output_weights().norm());
        }
        // the shared-factorization path equals individual fits; exactly when it
        // takes the same factorization route
        let single = elm_train(&x, &y, &ElmConfig { hidden: 40, ridge: 1e-2, ..Default::default() }, 9, &tags(4)).unwrap();
        let diff = (single.output_weights() - models[3].output_weights()).amax();
        assert!(diff < 1e-6 * single.output_weights().amax(), "{diff}");
        let positive = elm_train_path(&x, &y, 40, Activation::Sigmoid, &ridges[1..], 9, &tags(4)).unwrap();
        assert_eq!(single, positive[2]);
    }

    #[test]
    fn gram_and_svd_factors_agree() {
        let (x, y) = data(300, 4, 11);
        let model = elm_train(&x, &y, &ElmConfig { hidden: 60, activation: Activation::Sigmoid, ridge: 1e-3 }, 2, &tags(4)).unwrap();
        let h = model.hidden_matrix(&x);
        let (gram, svd) = (Factored::new(h.clone(), &y, true), Factored::new(h, &y, false));
        assert!(matches!(gram, Factored::Gram { .. }) && matches!(svd, Factored::Svd { .. }));
        for ridge in [1e-3, 1e-1, 10.0] {
            let (a, b) = (gram.solve(ridge), svd.solve(ridge));
            assert!((&a - &b).amax() < 1e-6 * b.amax().max(1.0), "ridge {ridge}");
        }
    }

    #[test]
    fn readout_is_locally_optimal() {
        let (x, y) = data(200, 3, 6);
        let model = elm_train(&x, &y, &ElmConfig { hidden: 20, ridge: 1e-2, ..Default::default() }, 2, &tags(3)).unwrap();
        let beta = model.output_weights().clone();
        let base = objective(&model, &x, &y, &beta);
        for i in 0..20 {
            for delta in [1e-3, -1e-3] {
                let mut b = beta.clone();
                b[(i, 0)] += delta;
                assert!(objective(&model, &x, &y, &b) >= base, "unit {i} delta {delta}");
            }
        }
    }

    #[test]
    fn duplicated_rows_and_zero_readout() {
        let (x, y) = data(50, 4, 7);
        let model = elm_train(&x, &y, &ElmConfig { hidden: 10, ..Default::default() }, 5, &tags(4)).unwrap();
        let row: Vec<f64> = x.row(3).iter().copied().collect();
        let five = DMatrix::from_fn(5, 4, |_, j| row[j]);
        let out = model.predict_column(&five).unwrap();
        assert!(out.iter().all(|&v| v == out[0]));
        assert_eq!(model.predict_row(&row).unwrap()[0], out[0]);

        let zero = ElmModel::from_parts(
            model.input_weights().clone(),
            model.biases().clone(),
            DMatrix::zeros(10, 1),
            Activation::Sigmoid,
            5,
            tags(4),
            0.0,
        )
        .unwrap();
        assert!(zero.predict(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors_are_named() {
        let (x, y) = data(10, 2, 8);
        let cfg = ElmConfig::default();
        assert!(matches!(elm_train(&x, &y.rows(0, 5).into_owned(), &cfg, 0, &tags(2)), Err(ElmError::Dimension(_))));
        assert!(matches!(elm_train(&x, &y, &cfg, 0, &tags(3)), Err(ElmError::Dimension(_))));
        let mut bad = x.clone();
        bad[(2, 1)] = f64::NAN;
        assert!(matches!(elm_train(&bad, &y, &cfg, 0, &tags(2)), Err(ElmError::NonFinite(_))));
        assert!(matches!(
            elm_train(&x, &y, &ElmConfig { hidden: 0, ..cfg }, 0, &tags(2)),
            Err(ElmError::InvalidConfig(_))
        ));
        let model = elm_train(&x, &y, &cfg, 0, &tags(2)).unwrap();
        assert!(matches!(model.predict_row(&[0.5]), Err(ElmError::Dimension(_))));
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let (x, y) = data(60, 3, 9);
        let model = elm_train(&x, &y, &ElmConfig { hidden: 12, activation: Activation::Tanh, ridge: 3e-5 }, 21, &tags(3)).unwrap();
        let mut buf = Vec::new();
        model.to_writer(&mut buf).unwrap();
        let back = ElmModel::from_reader(buf.as_slice()).unwrap();
        assert_eq!(model, back);
        let (p, q) = (model.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert!(p.iter().zip(q.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prediction_bounded_by_readout_mass(seed in 0u64..1000, hidden in 1usize..30, scale in 0.1f64..50.0) {
            let (x, y) = data(40, 3, seed);
            let y = y * scale;
            let model = elm_train(&x, &y, &ElmConfig { hidden, ..Default::default() }, seed, &tags(3)).unwrap();
            let mass: f64 = model.output_weights().iter().map(|b| b.abs()).sum();
            let mut rng = seed::rng(seed + 1);
            let probe = DMatrix::from_fn(25, 3, |_, _| rng.random_range(-3.0..3.0));
            for v in model.predict(&probe).unwrap().iter() {
                prop_assert!(v.abs() <= mass * (1.0 + 1e-12));
            }
        }

        #[test]
        fn hidden_unit_permutation_is_invisible(seed in 0u64..1000) {
            let (x, y) = data(50, 4, seed);
            let model = elm_train(&x, &y, &ElmConfig { hidden: 16, ..Default::default() }, seed, &tags(4)).unwrap();
            let mut perm: Vec<usize> = (0..16).collect();
            let mut rng = seed::rng(seed ^ 0xABCD);
            for i in (1..16).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let permuted = ElmModel::from_parts(
                model.input_weights().select_rows(&perm),
                DVector::from_iterator(16, perm.iter().map(|&i| model.biases()[i])),
                model.output_weights().select_rows(&perm),
                model.activation(),
                model.seed(),
                tags(4),
                model.ridge(),
            ).unwrap();
            let (a, b) = (model.predict(&x).unwrap(), permuted.predict(&x).unwrap());
            for (u, v) in a.iter().zip(b.iter()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
