use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Leading principal time courses of the highest-variance voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct CompCor {
    /// n × n_components, unit-norm columns (zero when flagged degenerate).
    pub components: Matrix,
    pub singular_values: Vec<f64>,
    /// Selected voxel indices, highest variance first.
    pub selected_voxels: Vec<usize>,
    /// Components with no variance behind them, returned as zeros.
    pub degenerate: Vec<usize>,
}

/// Selects the top `variance_fraction` of voxels by temporal variance and
/// returns the first `n_components` principal component time series of that
/// sub-matrix. Each component's sign makes its largest-magnitude voxel
/// loading positive.
pub fn compcor(y: &Matrix, variance_fraction: f64, n_components: usize) -> Result<CompCor> {
    let (n, p) = (y.nrows(), y.ncols());
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "variance fraction {variance_fraction} outside (0, 1]"
        )));
    }
    // Guard against 0.02 * 250 = 5.000000000000001 rounding up to 6.
    let count = ((variance_fraction * p as f64) - 1e-9).ceil().max(0.0) as usize;
    if count < n_components {
        return Err(Error::invalid(format!(
            "{count} high-variance voxels cannot yield {n_components} components"
        )));
    }
    if n < 2 {
        return Err(Error::invalid("compcor needs at least 2 timepoints"));
    }
    let variances: Vec<f64> = y
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
        })
        .collect();
    if variances.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("no voxel has temporal variance".into()));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let selected: Vec<usize> = order[..count].to_vec();

    let mut sub = y.select_columns(selected.iter());
    for mut col in sub.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let svd = sub.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;
    let mut rank_order: Vec<usize> = (0..sv.len()).collect();
    rank_order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let smax = sv.iter().cloned().fold(0.0, f64::max);

    let mut components = Matrix::zeros(n, n_components);
    let mut singular_values = vec![0.0; n_components];
    let mut degenerate = Vec::new();
    for c in 0..n_components {
        let Some(&src) = rank_order.get(c) else {
            degenerate.push(c);
            continue;
        };
        let s = sv[src];
        if !(s > 1e-12 * smax) {
            degenerate.push(c);
            continue;
        }
        let loading = vt.row(src);
        let (mut best, mut best_abs) = (0, -1.0);
        for (i, &l) in loading.iter().enumerate() {
            if l.abs() > best_abs {
                best = i;
                best_abs = l.abs();
            }
        }
        let sign = if loading[best] < 0.0 { -1.0 } else { 1.0 };
        components.set_column(c, &(u.column(src) * sign));
        singular_values[c] = s;
    }
    Ok(CompCor {
        components,
        singular_values,
        selected_voxels: selected,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    /// 5 orthogonal signals on 5 voxels, tiny jitter elsewhere, p = 250.
    fn planted(seed: u64) -> (Matrix, Matrix) {
        let n = 60;
        let mut g = rng::stream(seed, &[]);
        let raw = Matrix::from_fn(n, 5, |_, _| StandardNormal.sample(&mut g));
        let mut centered = raw.clone();
        for mut c in centered.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
        }
        let (q, _) = linalg::orthonormal_basis(&centered);
        let mut y = Matrix::from_fn(n, 250, |_, _| 1e-4 * crate::rng::normal(&mut g));
        for j in 0..5 {
            let col = q.column(j) * (10.0 * (j + 1) as f64);
            y.set_column(40 + 7 * j, &col);
        }
        (y, q)
    }

    #[test]
    fn recovers_planted_subspace() {
        let (y, q) = planted(3);
        let cc = compcor(&y, 0.02, 5).unwrap();
        let mut sel = cc.selected_voxels.clone();
        sel.sort_unstable();
        assert_eq!(sel, vec![40, 47, 54, 61, 68]);
        // Principal angles: singular values of QᵀU are cosines, all ≈ 1.
        let cos = (q.transpose() * &cc.components).singular_values();
        for c in cos.iter() {
            let angle = c.min(1.0).acos();
            assert!(angle < 1e-6, "principal angle {angle}");
        }
    }

    #[test]
    fn constant_data_is_degenerate() {
        let y = Matrix::from_element(20, 300, 3.0);
        assert!(matches!(compcor(&y, 0.02, 5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn too_few_voxels() {
        let y = Matrix::from_fn(20, 100, |t, v| (t * v) as f64);
        assert!(compcor(&y, 0.02, 5).is_err());
    }

    #[test]
    fn doubling_scales_singular_values_only() {
        let (y, _) = planted(5);
        let a = compcor(&y, 0.02, 5).unwrap();
        let b = compcor(&(y * 2.0), 0.02, 5).unwrap();
        assert_eq!(a.selected_voxels, b.selected_voxels);
        for (sa, sb) in a.singular_values.iter().zip(&b.singular_values) {
            assert!((2.0 * sa - sb).abs() < 1e-9 * sb);
        }
        assert!((a.components - b.components).amax() < 1e-9);
    }

    #[test]
    fn sign_convention_is_fixed() {
        let (y, _) = planted(8);
        let cc = compcor(&y, 0.02, 5).unwrap();
        let (y2, _) = planted(8);
        let cc2 = compcor(&(-y2), 0.02, 5).unwrap();
        // Negating the data flips loadings and time courses together.
        assert!((cc.components - cc2.components * -1.0).amax() < 1e-9);
    }
}
