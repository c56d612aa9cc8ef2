//! Nested hyperparameter selection by stratified inner cross-validation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{check_inputs, require_both_classes, ClassifierKind, LinearModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par;
use crate::rng::{self, tag};

#[derive(Debug, Clone)]
pub struct Selection {
    pub model: LinearModel,
    pub hyperparameter: f64,
    /// Mean inner-CV accuracy per grid point; empty for a one-point grid.
    pub inner_scores: Vec<f64>,
    pub n_splits: usize,
}

/// Test-index sets of `k` folds. Members of each stratum are shuffled and
/// dealt round-robin, continuing the rotation across strata so fold sizes
/// differ by at most one.
pub fn stratified_kfold(strata: &[usize], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let mut g = rng::stream(seed, &[tag::INNER_FOLDS, k as u64]);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut g);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn fold_is_degenerate(test: &[usize], y: &[f64]) -> bool {
    let n_pos = y.iter().filter(|v| **v > 0.0).count();
    let test_pos = test.iter().filter(|&&i| y[i] > 0.0).count();
    let train_pos = n_pos - test_pos;
    let train_n = y.len() - test.len();
    test.is_empty()
        || test_pos == 0
        || test_pos == test.len()
        || train_pos == 0
        || train_pos == train_n
}

fn accuracy(pred: &[f64], truth: &[f64]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Chooses a hyperparameter from `grid` by inner cross-validation
/// stratified on `strata` (e.g. site × condition) and refits the winner on
/// all of `x`. Ties go to the strongest regularization.
pub fn nested_select(
    x: &Matrix,
    y: &[f64],
    strata: &[usize],
    kind: ClassifierKind,
    grid: &[f64],
    inner_folds: usize,
    seed: u64,
) -> Result<Selection> {
    check_inputs(x, y)?;
    require_both_classes(y)?;
    if grid.is_empty() {
        return Err(Error::invalid("hyperparameter grid is empty"));
    }
    if strata.len() != y.len() {
        return Err(Error::invalid("one stratum label per sample required"));
    }
    if grid.len() == 1 {
        return Ok(Selection {
            model: kind.fit(x, y, grid[0])?,
            hyperparameter: grid[0],
            inner_scores: Vec::new(),
            n_splits: 0,
        });
    }

    let mut chosen = None;
    for k in (2..=inner_folds.max(2)).rev() {
        let folds = stratified_kfold(strata, k, seed);
        if folds.iter().all(|f| !fold_is_degenerate(f, y)) {
            chosen = Some(folds);
            break;
        }
        log::warn!("inner {k}-fold split leaves a fold without both classes; refolding");
    }
    let folds = chosen.ok_or_else(|| {
        Error::SingleClass("no inner split keeps both classes in every fold".into())
    })?;
    let n_splits = folds.len();

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..n_splits).map(move |f| (g, f)))
        .collect();
    let scores = par::try_map(&jobs, |&(gi, fi)| -> Result<f64> {
        let test = &folds[fi];
        let mut in_test = vec![false; y.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<usize> = (0..y.len()).filter(|&i| !in_test[i]).collect();
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let model = kind.fit(&x.select_rows(&train), &ytr, grid[gi])?;
        Ok(accuracy(&model.predict(&x.select_rows(test))?, &yte))
    })?;
    let inner_scores: Vec<f64> = (0..grid.len())
        .map(|g| scores[g * n_splits..(g + 1) * n_splits].iter().sum::<f64>() / n_splits as f64)
        .collect();

    let stronger = |a: f64, b: f64| {
        if kind.larger_is_stronger() {
            a > b
        } else {
            a < b
        }
    };
    let mut best = 0;
    for g in 1..grid.len() {
        let diff = inner_scores[g] - inner_scores[best];
        if diff > 1e-12 || (diff.abs() <= 1e-12 && stronger(grid[g], grid[best])) {
            best = g;
        }
    }
    Ok(Selection {
        model: kind.fit(x, y, grid[best])?,
        hyperparameter: grid[best],
        inner_scores,
        n_splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(seed: u64) -> (Matrix, Vec<f64>, Vec<usize>) {
        let mut g = rng::stream(seed, &[]);
        let n = 60;
        let y: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let x = Matrix::from_fn(n, 5, |i, j| {
            rng::normal(&mut g) + if j == 0 { 1.5 * y[i] } else { 0.0 }
        });
        let strata = (0..n)
            .map(|i| (i % 3) * 2 + (y[i] > 0.0) as usize)
            .collect();
        (x, y, strata)
    }

    #[test]
    fn folds_balance_strata() {
        let strata: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let folds = stratified_kfold(&strata, 5, 1);
        for f in &folds {
            assert_eq!(f.len(), 20);
            for s in 0..4 {
                assert_eq!(f.iter().filter(|&&i| strata[i] == s).count(), 5);
            }
        }
    }

    #[test]
    fn one_point_grid_is_direct_fit() {
        let (x, y, s) = data(1);
        let sel = nested_select(&x, &y, &s, ClassifierKind::Ridge, &[2.0], 5, 0).unwrap();
        assert_eq!(sel.model, ClassifierKind::Ridge.fit(&x, &y, 2.0).unwrap());
    }

    #[test]
    fn winner_has_best_inner_score_and_is_deterministic() {
        let (x, y, s) = data(2);
        let grid = [1e-3, 1.0, 1e3];
        for kind in [ClassifierKind::Ridge, ClassifierKind::SvcL2] {
            let a = nested_select(&x, &y, &s, kind, &grid, 5, 9).unwrap();
            let b = nested_select(&x, &y, &s, kind, &grid, 5, 9).unwrap();
            assert_eq!(a.hyperparameter, b.hyperparameter);
            assert_eq!(a.inner_scores, b.inner_scores);
            let best = grid.iter().position(|g| *g == a.hyperparameter).unwrap();
            assert!(a.inner_scores.iter().all(|s| *s <= a.inner_scores[best]));
        }
    }

    #[test]
    fn ties_choose_strongest_regularization() {
        // Perfectly separable along one feature: every grid point scores 1.
        let x = Matrix::from_fn(
            20,
            1,
            |i, _| if i % 2 == 0 { 5.0 } else { -5.0 } + i as f64 * 0.01,
        );
        let y: Vec<f64> = (0..20)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let s: Vec<usize> = y.iter().map(|v| (*v > 0.0) as usize).collect();
        let sel =
            nested_select(&x, &y, &s, ClassifierKind::Ridge, &[0.1, 1.0, 10.0], 5, 0).unwrap();
        assert_eq!(sel.hyperparameter, 10.0);
        let sel =
            nested_select(&x, &y, &s, ClassifierKind::SvcL2, &[0.1, 1.0, 10.0], 5, 0).unwrap();
        assert_eq!(sel.hyperparameter, 0.1);
    }

    #[test]
    fn rare_class_forces_fewer_splits() {
        let mut g = rng::stream(5, &[]);
        let x = Matrix::from_fn(12, 2, |_, _| rng::normal(&mut g));
        let mut y = vec![-1.0; 12];
        y[0] = 1.0;
        y[1] = 1.0;
        y[2] = 1.0;
        let s = vec![0; 12];
        let sel = nested_select(&x, &y, &s, ClassifierKind::Ridge, &[0.1, 1.0], 5, 0).unwrap();
        assert!(sel.n_splits <= 3);
    }
}
