//! Linear regression on the 0..=8 target and one-vs-rest logistic
//! regression over the nine classes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{RatingClass, N_CLASSES};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::net::sigmoid;
use crate::preprocess::FeatureMatrix;

/// Tikhonov term added to the weight diagonal of the normal equations.
pub const RIDGE: f64 = 1e-8;

/// Logit assigned to classes absent from the training data.
pub const ABSENT_LOGIT: f64 = -1e6;

fn check_shape(x: &[f64], n_cols: usize, n_rows: usize) -> Result<()> {
    if n_cols == 0 || x.len() != n_rows * n_cols {
        return Err(Error::Numeric(format!(
            "design matrix has {} values, expected {n_rows} × {n_cols}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite feature value {v}")));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64> {
    if pred.len() != y.len() || y.is_empty() {
        return Err(Error::Numeric(format!(
            "rmse needs equal non-zero lengths, got {} and {}",
            pred.len(),
            y.len()
        )));
    }
    let ss: f64 = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl Predictor for LinearModel {
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_dense != self.weights.len() {
            return Err(Error::Transform(format!(
                "linear model expects {} features, got {}",
                self.weights.len(),
                x.n_dense
            )));
        }
        Ok((0..x.n_rows)
            .map(|i| self.predict_row(x.dense_row(i)))
            .collect())
    }
}

/// Least squares with an unpenalized intercept, solving
/// `(XᵀX + λI) w = Xᵀy` on the augmented design.
pub fn fit_linear(x: &[f64], n_cols: usize, y: &[f64]) -> Result<LinearModel> {
    let n = y.len();
    check_shape(x, n_cols, n)?;
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite target {v}")));
    }
    let d = n_cols + 1;
    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut row = vec![0.0; d];
    for (r, &yr) in y.iter().enumerate() {
        row[..n_cols].copy_from_slice(&x[r * n_cols..(r + 1) * n_cols]);
        row[n_cols] = 1.0;
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            rhs[i] += xi * yr;
            for j in i..d {
                gram[i * d + j] += xi * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i * d + j] = gram[j * d + i];
        }
    }
    for i in 0..n_cols {
        gram[i * d + i] += RIDGE;
    }
    let a = DMatrix::from_row_slice(d, d, &gram);
    let b = DVector::from_vec(rhs);
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numeric("normal equations are singular".into()))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "linear solve produced non-finite weights".into(),
        ));
    }
    Ok(LinearModel {
        weights: sol.iter().take(n_cols).copied().collect(),
        bias: sol[n_cols],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-4,
            max_iter: 2000,
            step: 0.1,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// False for classes absent from the training data.
    pub trained: bool,
    pub iterations: usize,
}

impl BinaryClassifier {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Probability that `x` belongs to this classifier's class.
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// Nine independent binary classifiers; prediction is the argmax score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrLogisticModel {
    pub classifiers: Vec<BinaryClassifier>,
}

/// Sparse copy of a dense design, rows as (column, value) pairs.
struct SparseRows {
    starts: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseRows {
    fn new(x: &[f64], n_cols: usize) -> Self {
        let mut s = SparseRows {
            starts: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for row in x.chunks(n_cols) {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    s.cols.push(j as u32);
                    s.vals.push(v);
                }
            }
            s.starts.push(s.cols.len());
        }
        s
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.starts[r]..self.starts[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.vals[span])
            .map(|(&c, &v)| (c as usize, v))
    }
}

/// Full-batch gradient descent on mean binary cross-entropy plus
/// `l2/2 · ‖w‖²`, halting when the gradient ∞-norm drops below `tol`.
fn fit_binary(
    x: &SparseRows,
    n_cols: usize,
    target: &[f64],
    cfg: &LogisticConfig,
) -> BinaryClassifier {
    let m = target.len() as f64;
    let mut w = vec![0.0; n_cols];
    let mut b = 0.0;
    let mut gw = vec![0.0; n_cols];
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        gw.fill(0.0);
        let mut gb = 0.0;
        for (r, &t) in target.iter().enumerate() {
            let z = b + x.row(r).map(|(j, v)| w[j] * v).sum::<f64>();
            let err = sigmoid(z) - t;
            gb += err;
            for (j, v) in x.row(r) {
                gw[j] += err * v;
            }
        }
        gb /= m;
        let mut norm = gb.abs();
        for (g, wj) in gw.iter_mut().zip(&w) {
            *g = *g / m + cfg.l2 * wj;
            norm = norm.max(g.abs());
        }
        if norm < cfg.tol {
            break;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= cfg.step * g;
        }
        b -= cfg.step * gb;
    }
    BinaryClassifier {
        weights: w,
        bias: b,
        trained: true,
        iterations,
    }
}

pub fn fit_ovr_logistic(
    x: &[f64],
    n_cols: usize,
    y: &[RatingClass],
    cfg: &LogisticConfig,
) -> Result<OvrLogisticModel> {
    check_shape(x, n_cols, y.len())?;
    let mut present = [false; N_CLASSES];
    for c in y {
        present[c.index()] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::Numeric(
            "one-vs-rest logistic regression needs at least two distinct classes".into(),
        ));
    }
    let sparse = SparseRows::new(x, n_cols);
    let classifiers = (0..N_CLASSES)
        .into_par_iter()
        .map(|c| {
            if !present[c] {
                return BinaryClassifier {
                    weights: vec![0.0; n_cols],
                    bias: ABSENT_LOGIT,
                    trained: false,
                    iterations: 0,
                };
            }
            let target: Vec<f64> = y
                .iter()
                .map(|k| if k.index() == c { 1.0 } else { 0.0 })
                .collect();
            fit_binary(&sparse, n_cols, &target, cfg)
        })
        .collect();
    Ok(OvrLogisticModel { classifiers })
}

/// Argmax over class scores; ties go to the lower class index (the better
/// rating).
pub fn argmax_class(scores: &[f64]) -> RatingClass {
    let mut best = 0;
    for (c, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = c;
        }
    }
    RatingClass::ALL[best]
}

impl OvrLogisticModel {
    /// Per-class probabilities; not normalized across classes.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.classifiers.iter().map(|c| c.score(x)).collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.classifiers.iter().map(|c| c.logit(x)).collect()
    }

    /// Argmax is taken over logits, which orders classes exactly as the
    /// probabilities do without saturating at 0 or 1.
    pub fn predict_class(&self, x: &[f64]) -> RatingClass {
        argmax_class(&self.logits(x))
    }
}

pub fn predict_ovr(m: &OvrLogisticModel, x: &[f64]) -> RatingClass {
    m.predict_class(x)
}

impl Predictor for OvrLogisticModel {
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let n_cols = self.classifiers.first().map_or(0, |c| c.weights.len());
        if x.n_dense != n_cols {
            return Err(Error::Transform(format!(
                "logistic model expects {n_cols} features, got {}",
                x.n_dense
            )));
        }
        Ok((0..x.n_rows)
            .map(|i| self.predict_class(x.dense_row(i)).target() as f64)
            .collect())
    }
}
