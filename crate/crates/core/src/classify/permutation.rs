//! Null distribution of classifier weights under label permutation.

use rand::seq::SliceRandom;

use super::svc::solve_standardized;
use super::{check_inputs, column_means, ClassifierKind, Penalty, RidgeSolver, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSignificance {
    pub p_values: Vec<f64>,
    pub n_permutations: usize,
    pub observed_weights: Vec<f64>,
}

/// Two-sided permutation p-value per weight:
/// `(1 + #{|w_perm| ≥ |w_obs|}) / (n_permutations + 1)`.
///
/// The hyperparameter is held fixed; only the classifier is refitted on each
/// permuted label vector. Permutation `i` shuffles with the stream
/// `(seed, PERMUTATION, i)`.
pub fn permutation_weight_pvalues(
    x: &Matrix,
    y: &[f64],
    kind: ClassifierKind,
    hyperparameter: f64,
    n_permutations: usize,
    seed: u64,
) -> Result<WeightSignificance> {
    if n_permutations < 100 {
        return Err(Error::invalid(format!(
            "{n_permutations} permutations requested; at least 100 required"
        )));
    }
    check_inputs(x, y)?;
    let scaler = Standardizer::fit(x)?;
    let xs = scaler.transform(x)?;
    let means = column_means(&xs);

    let ridge = match kind {
        ClassifierKind::Ridge => Some(RidgeSolver::new(&xs, hyperparameter)?),
        _ => None,
    };
    let fit = |labels: &[f64]| -> Result<Vec<f64>> {
        match (&ridge, kind) {
            (Some(r), _) => Ok(r.solve(&means, labels).0),
            (None, ClassifierKind::SvcL1) => {
                super::require_both_classes(labels)?;
                Ok(solve_standardized(&xs, labels, Penalty::L1, hyperparameter).0)
            }
            (None, _) => {
                super::require_both_classes(labels)?;
                Ok(solve_standardized(&xs, labels, Penalty::L2, hyperparameter).0)
            }
        }
    };
    let observed = fit(y)?;

    let exceed = par::try_map(
        &(0..n_permutations).collect::<Vec<_>>(),
        |&p| -> Result<Vec<bool>> {
            let mut g = rng::stream(seed, &[tag::PERMUTATION, p as u64]);
            let mut labels = y.to_vec();
            labels.shuffle(&mut g);
            let w = fit(&labels)?;
            Ok(w.iter()
                .zip(&observed)
                .map(|(wp, wo)| wp.abs() >= wo.abs())
                .collect())
        },
    )?;
    let d = observed.len();
    let mut counts = vec![0usize; d];
    for row in &exceed {
        for (c, &e) in counts.iter_mut().zip(row) {
            *c += e as usize;
        }
    }
    let denom = (n_permutations + 1) as f64;
    Ok(WeightSignificance {
        p_values: counts.iter().map(|&c| (1 + c) as f64 / denom).collect(),
        n_permutations,
        observed_weights: observed,
    })
}
