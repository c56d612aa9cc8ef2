//! Dense linear-algebra helpers shared by the pipeline stages.
//!
//! Matrix functions of symmetric matrices (square root, logarithm,
//! exponential) go through a sorted symmetric eigendecomposition. Eigenvalues
//! of SPD inputs are floored at [`EIGEN_FLOOR`] before `log` or `1/sqrt`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sym_eigen(m: &Matrix) -> (Vector, Matrix) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `V f(Λ) Vᵀ` for a symmetric matrix.
pub fn sym_apply(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let (vals, vecs) = sym_eigen(m);
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[j]);
    }
    symmetrize(&(scaled * vecs.transpose()))
}

pub fn spd_log(m: &Matrix) -> Matrix {
    sym_apply(m, |l| l.max(EIGEN_FLOOR).ln())
}

pub fn sym_exp(m: &Matrix) -> Matrix {
    sym_apply(m, f64::exp)
}

pub fn spd_sqrt(m: &Matrix) -> Matrix {
    sym_apply(m, |l| l.max(EIGEN_FLOOR).sqrt())
}

pub fn spd_inv_sqrt(m: &Matrix) -> Matrix {
    sym_apply(m, |l| 1.0 / l.max(EIGEN_FLOOR).sqrt())
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn is_spd(m: &Matrix) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

pub fn check_spd(m: &Matrix, what: &str) -> Result<()> {
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotSpd(format!("{what} is not symmetric")));
    }
    if !is_spd(m) {
        return Err(Error::NotSpd(format!(
            "{what} failed Cholesky factorization"
        )));
    }
    Ok(())
}

/// Orthonormal basis of the column space of `c` by modified Gram-Schmidt with
/// one re-orthogonalization pass.
///
/// Columns whose residual norm falls below `1e-10` of their own norm are
/// dependent on earlier columns and are skipped; their indices are returned.
pub fn orthonormal_basis(c: &Matrix) -> (Matrix, Vec<usize>) {
    let n = c.nrows();
    let mut basis: Vec<Vector> = Vec::with_capacity(c.ncols());
    let mut dropped = Vec::new();
    for j in 0..c.ncols() {
        let original = c.column(j).into_owned();
        let norm0 = original.norm();
        let mut v = original;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || !norm.is_finite() || norm <= 1e-10 * norm0 {
            dropped.push(j);
            continue;
        }
        basis.push(v / norm);
    }
    let q = if basis.is_empty() {
        Matrix::zeros(n, 0)
    } else {
        Matrix::from_columns(&basis)
    };
    (q, dropped)
}

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd("system matrix failed Cholesky factorization".into()))?;
    Ok(chol.solve(b))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Serde adapter writing a matrix as a list of rows.
pub mod serde_rows {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}
