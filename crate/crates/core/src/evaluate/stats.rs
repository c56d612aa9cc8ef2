//! Linear-model effects, signed-rank tests and small helpers on score tables.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_basis, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub factor: String,
    pub level: String,
    /// Deviation from the grand mean, in the units of the response.
    pub coefficient: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Main-effects linear model of `response` on categorical factors.
///
/// `levels[r][f]` is the level of factor `f` in row `r`. Each factor is
/// sum coded so coefficients are deviations from the grand mean and sum to
/// zero within a factor. Intervals are 95% t intervals from the classical
/// covariance with residual degrees of freedom.
pub fn anova_effects(
    factors: &[String],
    levels: &[Vec<String>],
    response: &[f64],
) -> Result<Vec<EffectEstimate>> {
    let n = response.len();
    if levels.len() != n {
        return Err(Error::invalid("one level row per response value required"));
    }
    if levels.iter().any(|r| r.len() != factors.len()) {
        return Err(Error::invalid("every row needs one level per factor"));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response contains non-finite values"));
    }
    let distinct: Vec<Vec<String>> = (0..factors.len())
        .map(|f| {
            let s: BTreeSet<&String> = levels.iter().map(|r| &r[f]).collect();
            s.into_iter().cloned().collect()
        })
        .collect();
    if let Some(f) = distinct.iter().position(|d| d.len() < 2) {
        return Err(Error::invalid(format!(
            "factor `{}` has fewer than 2 levels",
            factors[f]
        )));
    }

    // Column 0 is the intercept; factor f owns columns for all but its last level.
    let mut names = vec![("intercept".to_string(), String::new())];
    let mut offsets = Vec::new();
    for (f, d) in distinct.iter().enumerate() {
        offsets.push(names.len());
        names.extend(
            d[..d.len() - 1]
                .iter()
                .map(|l| (factors[f].clone(), l.clone())),
        );
    }
    let p = names.len();
    let mut x = Matrix::zeros(n, p);
    for (r, row) in levels.iter().enumerate() {
        x[(r, 0)] = 1.0;
        for (f, d) in distinct.iter().enumerate() {
            let li = d.binary_search(&row[f]).unwrap();
            if li + 1 == d.len() {
                for c in 0..d.len() - 1 {
                    x[(r, offsets[f] + c)] = -1.0;
                }
            } else {
                x[(r, offsets[f] + li)] = 1.0;
            }
        }
    }
    let (_, dropped) = orthonormal_basis(&x);
    if !dropped.is_empty() {
        let listed: Vec<String> = dropped
            .iter()
            .map(|&c| format!("{}={}", names[c].0, names[c].1))
            .collect();
        return Err(Error::Aliased(format!(
            "{} are linear combinations of earlier factor levels",
            listed.join(", ")
        )));
    }

    let xtx = x.transpose() * &x;
    let inv = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Aliased("design is not of full rank".into()))?
        .inverse();
    let y = Vector::from_column_slice(response);
    let beta = &inv * (x.transpose() * &y);
    let resid = &y - &x * &beta;
    let dof = n - p;
    let half_width = |var: f64| -> f64 {
        if dof == 0 {
            return f64::INFINITY;
        }
        let sigma2 = resid.norm_squared() / dof as f64;
        let t = StudentsT::new(0.0, 1.0, dof as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::NAN);
        t * (sigma2 * var.max(0.0)).sqrt()
    };

    let mut out = Vec::new();
    for (f, d) in distinct.iter().enumerate() {
        let cols: Vec<usize> = (offsets[f]..offsets[f] + d.len() - 1).collect();
        for (li, level) in d.iter().enumerate() {
            let (coef, var) = if li + 1 < d.len() {
                let c = cols[li];
                (beta[c], inv[(c, c)])
            } else {
                let coef = -cols.iter().map(|&c| beta[c]).sum::<f64>();
                let var = cols
                    .iter()
                    .flat_map(|&a| cols.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| inv[(a, b)])
                    .sum();
                (coef, var)
            };
            let h = half_width(var);
            out.push(EffectEstimate {
                factor: factors[f].clone(),
                level: level.clone(),
                coefficient: coef,
                ci_low: coef - h,
                ci_high: coef + h,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wilcoxon {
    /// Two-sided p-value.
    pub p_value: f64,
    /// Sum of ranks of positive differences `b − a`.
    pub statistic: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    /// Every difference was zero.
    pub all_zero: bool,
}

pub const WILCOXON_EXACT_MAX: usize = 25;

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes share mid-ranks. Up to
/// 25 remaining pairs the null distribution is enumerated exactly (over
/// doubled ranks so mid-ranks stay integral); above that a normal
/// approximation with tie-corrected variance is used.
pub fn wilcoxon_pairwise(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::invalid("paired samples must have equal length"));
    }
    if a.len() < 6 {
        return Err(Error::invalid(format!(
            "signed-rank test needs at least 6 pairs, got {}",
            a.len()
        )));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| y - x)
        .filter(|v| *v != 0.0)
        .collect();
    let n = d.len();
    if n == 0 {
        return Ok(Wilcoxon {
            p_value: 1.0,
            statistic: 0.0,
            n_used: 0,
            all_zero: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, tie_sizes) = midranks(&abs);
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();

    let p = if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        (2.0 * lower.min(upper)).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let ties: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = (w_plus - mean) / var.sqrt();
            let normal = Normal::standard();
            (2.0 * normal.cdf(-z.abs())).min(1.0)
        }
    };
    Ok(Wilcoxon {
        p_value: p,
        statistic: w_plus,
        n_used: n,
        all_zero: false,
    })
}

/// 1-based mid-ranks and the sizes of tie groups.
fn midranks(v: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Holm step-down adjusted p-values, returned in input order.
pub fn holm(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[i]).min(1.0));
        adjusted[i] = running;
    }
    adjusted
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, _) = midranks(x);
    let (ry, _) = midranks(y);
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Kolmogorov-Smirnov statistic of `p` against Uniform(0, 1).
pub fn ks_uniform(p: &[f64]) -> f64 {
    let mut s = p.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn constant_response_gives_zero_effects() {
        let factors = strings(&["a"]);
        let levels: Vec<Vec<String>> = (0..6).map(|i| strings(&[["x", "y", "z"][i % 3]])).collect();
        let e = anova_effects(&factors, &levels, &[0.7; 6]).unwrap();
        for est in &e {
            assert!(est.coefficient.abs() < 1e-12);
            assert!(est.ci_low <= 0.0 && est.ci_high >= 0.0);
        }
    }

    #[test]
    fn balanced_design_matches_group_means() {
        let mut g = rng::stream(3, &[]);
        let factors = strings(&["a", "b"]);
        let mut levels = Vec::new();
        let mut y = Vec::new();
        for rep in 0..4 {
            for a in ["p", "q", "r"] {
                for b in ["u", "v"] {
                    levels.push(strings(&[a, b]));
                    y.push(rng::normal(&mut g) + rep as f64 * 0.1);
                }
            }
        }
        let e = anova_effects(&factors, &levels, &y).unwrap();
        let grand = y.iter().sum::<f64>() / y.len() as f64;
        for est in &e {
            let f = factors.iter().position(|f| *f == est.factor).unwrap();
            let group: Vec<f64> = levels
                .iter()
                .zip(&y)
                .filter(|(l, _)| l[f] == est.level)
                .map(|(_, v)| *v)
                .collect();
            let m = group.iter().sum::<f64>() / group.len() as f64;
            assert!((est.coefficient - (m - grand)).abs() < 1e-10);
            assert!(est.ci_low <= est.coefficient && est.coefficient <= est.ci_high);
        }
        let sum_a: f64 = e
            .iter()
            .filter(|e| e.factor == "a")
            .map(|e| e.coefficient)
            .sum();
        assert!(sum_a.abs() < 1e-12);
    }

    #[test]
    fn aliased_factors_rejected() {
        let factors = strings(&["a", "b"]);
        let levels: Vec<Vec<String>> = (0..8)
            .map(|i| {
                if i % 2 == 0 {
                    strings(&["x", "u"])
                } else {
                    strings(&["y", "v"])
                }
            })
            .collect();
        let y: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let err = anova_effects(&factors, &levels, &y).unwrap_err();
        assert!(
            matches!(err, Error::Aliased(ref m) if m.contains("b=u")),
            "{err}"
        );
        let single = vec![strings(&["x"]); 4];
        assert!(anova_effects(&strings(&["a"]), &single, &[1.0; 4]).is_err());
    }

    #[test]
    fn wilcoxon_exact_shift() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.37).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let w = wilcoxon_pairwise(&a, &b).unwrap();
        assert!((w.p_value - 2.0 / 1024.0).abs() < 1e-15);
        assert_eq!(w.statistic, 55.0);
        let same = wilcoxon_pairwise(&a, &a).unwrap();
        assert!(same.all_zero && same.p_value == 1.0);
        assert!(wilcoxon_pairwise(&a[..5], &b[..5]).is_err());
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration() {
        // Brute force over all sign patterns, with ties.
        let d = [1.0, -2.0, 2.0, 3.0, -0.5, 4.0, 4.0, -1.5];
        let a = vec![0.0; d.len()];
        let w = wilcoxon_pairwise(&a, &d).unwrap();
        let (ranks, _) = midranks(&d.iter().map(|v: &f64| v.abs()).collect::<Vec<_>>());
        let n = d.len();
        let mut le = 0usize;
        let mut ge = 0usize;
        for mask in 0..(1usize << n) {
            let s: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            le += (s <= w.statistic + 1e-9) as usize;
            ge += (s >= w.statistic - 1e-9) as usize;
        }
        let expect = (2.0 * le.min(ge) as f64 / (1usize << n) as f64).min(1.0);
        assert!((w.p_value - expect).abs() < 1e-12);
    }

    #[test]
    fn holm_adjustment() {
        let adj = holm(&[0.01, 0.04, 0.03, 0.5]);
        for (a, e) in adj.iter().zip([0.04, 0.09, 0.09, 0.5]) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 25.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), 0.0);
    }
}
