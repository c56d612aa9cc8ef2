//! Group-level nuisance regression of connectivity features on site, age and
//! sex. Coefficients come from training subjects only and are applied to
//! everyone.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::synthdata::{Sex, SubjectRecord};

/// Covariate design without the intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCovariates {
    pub names: Vec<String>,
    /// One row per record passed to [`GroupCovariates::build`].
    pub matrix: Matrix,
}

impl GroupCovariates {
    /// Site indicators (the lowest training site is the baseline), age and
    /// sex. Subjects from sites absent in training get the training site
    /// frequencies in place of an indicator, i.e. the average site effect.
    pub fn build(records: &[&SubjectRecord], train_ids: &BTreeSet<usize>) -> Self {
        let mut site_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for r in records.iter().filter(|r| train_ids.contains(&r.subject_id)) {
            *site_counts.entry(r.site_id).or_default() += 1;
        }
        let n_train: usize = site_counts.values().sum();
        let site_cols: Vec<usize> = site_counts.keys().skip(1).copied().collect();
        let mut names: Vec<String> = site_cols.iter().map(|s| format!("site_{s}")).collect();
        names.push("age".into());
        names.push("sex_male".into());

        let c = names.len();
        let mut matrix = Matrix::zeros(records.len(), c);
        for (row, r) in records.iter().enumerate() {
            let seen = site_counts.contains_key(&r.site_id);
            for (j, &s) in site_cols.iter().enumerate() {
                matrix[(row, j)] = if seen {
                    (r.site_id == s) as u8 as f64
                } else {
                    site_counts[&s] as f64 / n_train as f64
                };
            }
            matrix[(row, c - 2)] = r.age;
            matrix[(row, c - 1)] = (r.sex == Sex::Male) as u8 as f64;
        }
        Self { names, matrix }
    }
}

/// Fitted nuisance model.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupConfoundModel {
    /// Covariate columns used in the fit.
    pub kept: Vec<usize>,
    /// Covariate columns dropped as linearly dependent on the training set.
    pub dropped: Vec<usize>,
    centers: Vec<f64>,
    scales: Vec<f64>,
    /// (1 + kept) × d coefficients on the centred and scaled design.
    coefficients: Matrix,
}

impl GroupConfoundModel {
    /// Ordinary least squares with intercept of each feature column on the
    /// covariates, using `train_rows` only.
    pub fn fit(features: &Matrix, covariates: &Matrix, train_rows: &[usize]) -> Result<Self> {
        if features.nrows() != covariates.nrows() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} covariate rows",
                features.nrows(),
                covariates.nrows()
            )));
        }
        if train_rows.is_empty() {
            return Err(Error::invalid("group regression needs training subjects"));
        }
        if !linalg::all_finite(features) || !linalg::all_finite(covariates) {
            return Err(Error::invalid("non-finite features or covariates"));
        }
        let c = covariates.ncols();
        let nt = train_rows.len();
        let mut centers = Vec::with_capacity(c);
        let mut scales = Vec::with_capacity(c);
        for j in 0..c {
            let vals: Vec<f64> = train_rows.iter().map(|&r| covariates[(r, j)]).collect();
            let m = linalg::mean(&vals);
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nt as f64).sqrt();
            centers.push(m);
            scales.push(if sd > 0.0 { sd } else { 1.0 });
        }
        let design = Matrix::from_fn(nt, c + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                (covariates[(train_rows[i], j - 1)] - centers[j - 1]) / scales[j - 1]
            }
        });
        let (_, dependent) = linalg::orthonormal_basis(&design);
        if dependent.contains(&0) {
            return Err(Error::Degenerate("intercept column is zero".into()));
        }
        let dropped: Vec<usize> = dependent.iter().map(|j| j - 1).collect();
        if !dropped.is_empty() {
            log::warn!(
                "group regression drops dependent covariate columns {dropped:?} on {nt} training subjects"
            );
        }
        let kept: Vec<usize> = (0..c).filter(|j| !dropped.contains(j)).collect();
        let cols: Vec<usize> = std::iter::once(0)
            .chain(kept.iter().map(|j| j + 1))
            .collect();
        let d = design.select_columns(&cols);
        let f = features.select_rows(train_rows);
        let coefficients = linalg::spd_solve(&(d.transpose() * &d), &(d.transpose() * f))?;
        Ok(Self {
            kept,
            dropped,
            centers,
            scales,
            coefficients,
        })
    }

    fn design(&self, covariates: &Matrix) -> Matrix {
        Matrix::from_fn(covariates.nrows(), self.kept.len() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                let c = self.kept[j - 1];
                (covariates[(i, c)] - self.centers[c]) / self.scales[c]
            }
        })
    }

    /// Residual features for every row.
    pub fn apply(&self, features: &Matrix, covariates: &Matrix) -> Result<Matrix> {
        if features.ncols() != self.coefficients.ncols()
            || covariates.ncols() != self.centers.len()
            || features.nrows() != covariates.nrows()
        {
            return Err(Error::invalid(
                "features or covariates do not match the fitted model",
            ));
        }
        Ok(features - self.design(covariates) * &self.coefficients)
    }
}

/// Fits on `train_rows` and returns residuals for all rows with the model.
pub fn regress_out_group_confounds(
    features: &Matrix,
    covariates: &Matrix,
    train_rows: &[usize],
) -> Result<(Matrix, GroupConfoundModel)> {
    let model = GroupConfoundModel::fit(features, covariates, train_rows)?;
    Ok((model.apply(features, covariates)?, model))
}
