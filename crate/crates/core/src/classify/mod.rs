//! Linear diagnosis models on standardized features.
//!
//! Labels are ±1 (case = +1). Every model carries the feature scaler fitted
//! on its training data; decisions are `w · standardize(x) + b` and a
//! positive decision predicts a case.

mod permutation;
mod select;
mod svc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub use permutation::{permutation_weight_pvalues, WeightSignificance};
pub use select::{nested_select, stratified_kfold, Selection};
pub use svc::{fit_svc, svc_objective, SvcFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    SquaredHinge,
    Ridge,
}

/// Model family as named in pipeline configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    SvcL1,
    SvcL2,
    Ridge,
}

impl ClassifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::SvcL1 => "svc_l1",
            ClassifierKind::SvcL2 => "svc_l2",
            ClassifierKind::Ridge => "ridge",
        }
    }

    /// Whether larger hyperparameters regularize more (ridge α) or less (SVC C).
    pub fn larger_is_stronger(&self) -> bool {
        matches!(self, ClassifierKind::Ridge)
    }

    pub fn fit(&self, x: &Matrix, y: &[f64], hyper: f64) -> Result<LinearModel> {
        match self {
            ClassifierKind::SvcL1 => fit_svc(x, y, Penalty::L1, hyper).map(|f| f.model),
            ClassifierKind::SvcL2 => fit_svc(x, y, Penalty::L2, hyper).map(|f| f.model),
            ClassifierKind::Ridge => fit_ridge_classifier(x, y, hyper),
        }
    }
}

/// Seven log-spaced values from 1e-3 to 1e3.
pub fn default_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

/// Per-column centring and scaling (population standard deviation).
/// Constant columns keep scale 1 and therefore map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::invalid("cannot standardize zero samples"));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd > 1e-12 * m.abs().max(1.0) {
                sd
            } else {
                1.0
            });
        }
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "{} features, scaler expects {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        Ok(Matrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub penalty: Penalty,
    pub loss: Loss,
    /// C for the SVC family, α for ridge.
    pub hyperparameter: f64,
    pub scaler: Standardizer,
}

impl LinearModel {
    pub fn decision(&self, x: &Matrix) -> Result<Vec<f64>> {
        let xs = self.scaler.transform(x)?;
        Ok(decision_standardized(&xs, &self.weights, self.intercept))
    }

    /// +1 for a positive decision, −1 otherwise.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .decision(x)?
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 } else { -1.0 })
            .collect())
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }
}

pub(crate) fn decision_standardized(xs: &Matrix, w: &[f64], b: f64) -> Vec<f64> {
    let wv = linalg::Vector::from_column_slice(w);
    (xs * wv).iter().map(|v| v + b).collect()
}

pub(crate) fn check_inputs(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("no training samples"));
    }
    if !linalg::all_finite(x) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite features or labels"));
    }
    if let Some(v) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
        return Err(Error::invalid(format!("label {v} is not ±1")));
    }
    Ok(())
}

pub(crate) fn require_both_classes(y: &[f64]) -> Result<()> {
    let pos = y.iter().filter(|v| **v > 0.0).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass(format!(
            "{pos} cases among {} training samples",
            y.len()
        )));
    }
    Ok(())
}

/// Ridge solve on already-standardized data: `w = A (y − ȳ)` with `A` fixed
/// by the design and α. Reusing `A` makes refits on permuted labels cheap.
#[derive(Debug, Clone)]
pub struct RidgeSolver {
    /// d × n map from centred labels to weights.
    map: Matrix,
}

impl RidgeSolver {
    pub fn new(xs: &Matrix, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!(
                "ridge alpha {alpha} must be positive"
            )));
        }
        let (n, d) = xs.shape();
        let mut xc = xs.clone();
        for mut col in xc.column_iter_mut() {
            let m = col.sum() / n as f64;
            col.add_scalar_mut(-m);
        }
        // Primal (d × d) or dual (n × n) system, whichever is smaller.
        let map = if d <= n {
            let mut g = xc.transpose() * &xc;
            for i in 0..d {
                g[(i, i)] += alpha;
            }
            linalg::spd_solve(&g, &xc.transpose())?
        } else {
            let mut k = &xc * xc.transpose();
            for i in 0..n {
                k[(i, i)] += alpha;
            }
            xc.transpose() * linalg::spd_solve(&k, &Matrix::identity(n, n))?
        };
        Ok(Self { map })
    }

    /// Weights and intercept. The intercept makes the mean decision equal
    /// the mean label.
    pub fn solve(&self, xs_means: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
        let ybar = linalg::mean(y);
        let yc = linalg::Vector::from_iterator(y.len(), y.iter().map(|v| v - ybar));
        let w = &self.map * yc;
        let b = ybar - w.iter().zip(xs_means).map(|(w, m)| w * m).sum::<f64>();
        (w.iter().copied().collect(), b)
    }
}

pub(crate) fn column_means(x: &Matrix) -> Vec<f64> {
    x.column_iter()
        .map(|c| c.sum() / x.nrows() as f64)
        .collect()
}

/// Ridge regression on ±1 labels, classified by sign. Features are
/// standardized first and the scaler is kept on the model.
pub fn fit_ridge_classifier(x: &Matrix, y: &[f64], alpha: f64) -> Result<LinearModel> {
    check_inputs(x, y)?;
    let scaler = Standardizer::fit(x)?;
    let xs = scaler.transform(x)?;
    let (weights, intercept) = RidgeSolver::new(&xs, alpha)?.solve(&column_means(&xs), y);
    Ok(LinearModel {
        weights,
        intercept,
        penalty: Penalty::L2,
        loss: Loss::Ridge,
        hyperparameter: alpha,
        scaler,
    })
}
