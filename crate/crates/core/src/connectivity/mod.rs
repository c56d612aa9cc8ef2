//! Shrunk covariance and its parameterizations as connectivity features.
//!
//! Correlation and partial-correlation vectors hold the strict lower triangle
//! in row-major order: (1,0), (2,0), (2,1), (3,0), ... Tangent vectors hold the
//! lower triangle including the diagonal, (0,0), (1,0), (1,1), (2,0), ...,
//! with off-diagonal entries scaled by √2 so the Euclidean norm of the vector
//! equals the Frobenius norm of the matrix.

mod group;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub use group::{regress_out_group_confounds, GroupConfoundModel, GroupCovariates};

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub sigma: Matrix,
    pub shrinkage_alpha: f64,
}

/// Ledoit-Wolf shrinkage of the empirical covariance of `u` (n × k) towards
/// a scaled identity. Columns are centred; the empirical covariance divides
/// by n.
pub fn ledoit_wolf(u: &Matrix) -> Result<CovarianceMatrix> {
    let (n, k) = u.shape();
    if n < 2 {
        return Err(Error::invalid(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    if k == 0 {
        return Err(Error::invalid("covariance of zero variables"));
    }
    if !linalg::all_finite(u) {
        return Err(Error::invalid("time series contain non-finite values"));
    }
    let mut x = u.clone();
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let nf = n as f64;
    let kf = k as f64;
    let s = linalg::symmetrize(&(x.transpose() * &x / nf));
    let mu = s.trace() / kf;

    // Sum over samples of ‖x_t‖⁴ and ‖S‖²_F give the variance of the
    // per-sample outer products around S.
    let fourth: f64 = x.row_iter().map(|r| r.norm_squared().powi(2)).sum();
    let s_norm2 = s.norm_squared();
    let beta = (fourth / nf - s_norm2) / (kf * nf);
    let delta = (s_norm2 - 2.0 * mu * s.trace() + kf * mu * mu) / kf;

    let alpha = if delta <= f64::EPSILON * s_norm2.max(f64::MIN_POSITIVE) {
        0.0
    } else {
        (beta.min(delta) / delta).clamp(0.0, 1.0)
    };
    let mut sigma = &s * (1.0 - alpha);
    for i in 0..k {
        sigma[(i, i)] += alpha * mu;
    }
    Ok(CovarianceMatrix {
        sigma,
        shrinkage_alpha: alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectivityKind {
    Correlation,
    Partial,
    Tangent,
}

impl ConnectivityKind {
    pub fn name(&self) -> &'static str {
        match self {
            ConnectivityKind::Correlation => "correlation",
            ConnectivityKind::Partial => "partial",
            ConnectivityKind::Tangent => "tangent",
        }
    }

    pub fn includes_diagonal(&self) -> bool {
        matches!(self, ConnectivityKind::Tangent)
    }

    pub fn feature_len(&self, k: usize) -> usize {
        if self.includes_diagonal() {
            k * (k + 1) / 2
        } else {
            k * k.saturating_sub(1) / 2
        }
    }

    /// Region pair behind each feature coordinate, `(row, col)` with row ≥ col.
    pub fn feature_pairs(&self, k: usize) -> Vec<(usize, usize)> {
        let diag = self.includes_diagonal() as usize;
        (0..k)
            .flat_map(|i| (0..i + diag).map(move |j| (i, j)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityFeatures {
    pub subject_id: usize,
    pub kind: ConnectivityKind,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentReference {
    pub reference: Matrix,
    pub whitener: Matrix,
    pub iterations: usize,
    /// Frobenius norm of the mean whitened logarithm at the returned reference.
    pub residual: f64,
}

const KARCHER_TOL: f64 = 1e-7;
const KARCHER_MAX_ITER: usize = 50;

/// Mean of `logm(G^(-1/2) Σ_i G^(-1/2))` over the inputs.
pub fn karcher_gradient(g: &Matrix, sigmas: &[&Matrix]) -> Matrix {
    let w = linalg::spd_inv_sqrt(g);
    let k = g.nrows();
    let mut acc = Matrix::zeros(k, k);
    for s in sigmas {
        acc += linalg::spd_log(&linalg::symmetrize(&(&w * *s * &w)));
    }
    acc / sigmas.len() as f64
}

/// Geometric mean of SPD matrices by fixed-point iteration from the
/// arithmetic mean.
pub fn fit_tangent_reference(sigmas: &[&Matrix]) -> Result<TangentReference> {
    let first = sigmas
        .first()
        .ok_or_else(|| Error::invalid("tangent reference needs at least one covariance"))?;
    let k = first.nrows();
    for (i, s) in sigmas.iter().enumerate() {
        if s.shape() != (k, k) {
            return Err(Error::invalid(format!(
                "covariance {i} is {:?}, expected {k}x{k}",
                s.shape()
            )));
        }
        linalg::check_spd(s, &format!("covariance {i}"))?;
    }
    let mut g = Matrix::zeros(k, k);
    for s in sigmas {
        g += *s;
    }
    g = linalg::symmetrize(&(g / sigmas.len() as f64));

    let mut iterations = 0;
    let mut grad = karcher_gradient(&g, sigmas);
    while grad.norm() >= KARCHER_TOL && iterations < KARCHER_MAX_ITER {
        let half = linalg::spd_sqrt(&g);
        g = linalg::symmetrize(&(&half * linalg::sym_exp(&grad) * &half));
        iterations += 1;
        grad = karcher_gradient(&g, sigmas);
    }
    let residual = grad.norm();
    if residual >= KARCHER_TOL {
        log::warn!(
            "geometric mean stopped after {iterations} iterations at residual {residual:.3e}"
        );
    }
    Ok(TangentReference {
        whitener: linalg::spd_inv_sqrt(&g),
        reference: g,
        iterations,
        residual,
    })
}

fn lower_triangle(m: &Matrix, kind: ConnectivityKind, off_scale: f64) -> Vec<f64> {
    kind.feature_pairs(m.nrows())
        .into_iter()
        .map(|(i, j)| {
            if i == j {
                m[(i, j)]
            } else {
                off_scale * m[(i, j)]
            }
        })
        .collect()
}

/// Connectivity matrix of `kind` (k × k) before vectorization.
pub fn connectivity_matrix(
    sigma: &Matrix,
    kind: ConnectivityKind,
    reference: Option<&TangentReference>,
) -> Result<Matrix> {
    let k = sigma.nrows();
    if !sigma.is_square() || !linalg::all_finite(sigma) {
        return Err(Error::invalid("covariance must be a finite square matrix"));
    }
    match kind {
        ConnectivityKind::Correlation => {
            let d = diag_inv_sqrt(sigma)?;
            Ok(Matrix::from_fn(k, k, |i, j| sigma[(i, j)] * d[i] * d[j]))
        }
        ConnectivityKind::Partial => {
            let precision = sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotSpd("covariance is singular; cannot invert".into()))?
                .inverse();
            let d = diag_inv_sqrt(&precision)?;
            Ok(Matrix::from_fn(k, k, |i, j| {
                if i == j {
                    1.0
                } else {
                    -precision[(i, j)] * d[i] * d[j]
                }
            }))
        }
        ConnectivityKind::Tangent => {
            let r = reference.ok_or_else(|| {
                Error::invalid(
                    "tangent parameterization requires a reference fitted on training subjects",
                )
            })?;
            if r.whitener.shape() != (k, k) {
                return Err(Error::invalid("tangent reference has the wrong size"));
            }
            let white = linalg::symmetrize(&(&r.whitener * sigma * r.whitener.transpose()));
            Ok(linalg::spd_log(&white))
        }
    }
}

fn diag_inv_sqrt(m: &Matrix) -> Result<Vec<f64>> {
    (0..m.nrows())
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 {
                Ok(1.0 / v.sqrt())
            } else {
                Err(Error::Degenerate(format!("diagonal entry {i} is {v}")))
            }
        })
        .collect()
}

/// Vectorized connectivity of `kind`.
pub fn parameterize(
    sigma: &CovarianceMatrix,
    kind: ConnectivityKind,
    reference: Option<&TangentReference>,
) -> Result<Vec<f64>> {
    let m = connectivity_matrix(&sigma.sigma, kind, reference)?;
    let scale = if kind.includes_diagonal() {
        std::f64::consts::SQRT_2
    } else {
        1.0
    };
    Ok(lower_triangle(&m, kind, scale))
}
