//! Region time-series extraction and confound removal.
//!
//! Voxel signals `Y` (n × p) are modelled as a mixture `U V` of k spatial maps
//! `V` (k × p); the region series `U` come from a least-squares fit. Confounds
//! are then projected out on an orthonormal basis of the confound matrix.

mod compcor;
mod descriptors;
mod motion;

pub use compcor::{compcor, CompCor};
pub use descriptors::{
    extract_temporal_descriptors, motion_summary_channels, movement_descriptors, Descriptors,
    DESCRIPTORS_PER_SIGNAL, DESCRIPTOR_NAMES,
};
pub use motion::friston24;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Voxel signals, n timepoints × p voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTimeSeries(Matrix);

impl VoxelTimeSeries {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::invalid(
                "voxel time series needs at least 2 timepoints",
            ));
        }
        if !linalg::all_finite(&data) {
            return Err(Error::invalid(
                "voxel time series contains non-finite values",
            ));
        }
        Ok(Self(data))
    }

    pub fn n_timepoints(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// k spatial maps over p voxels. Hard parcellations are stored as indicator
/// rows; `region_ids` keeps the label each row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasMaps {
    maps: Matrix,
    region_ids: Vec<usize>,
}

impl AtlasMaps {
    pub fn new(maps: Matrix) -> Result<Self> {
        let ids = (0..maps.nrows()).collect();
        Self::with_ids(maps, ids)
    }

    pub fn with_ids(maps: Matrix, region_ids: Vec<usize>) -> Result<Self> {
        if maps.nrows() == 0 {
            return Err(Error::invalid("atlas needs at least one map"));
        }
        if region_ids.len() != maps.nrows() {
            return Err(Error::invalid("one region id per map row required"));
        }
        if !linalg::all_finite(&maps) {
            return Err(Error::invalid("atlas maps contain non-finite values"));
        }
        if let Some(r) = (0..maps.nrows()).find(|&r| maps.row(r).iter().all(|&w| w == 0.0)) {
            return Err(Error::invalid(format!("atlas map {r} is empty")));
        }
        Ok(Self { maps, region_ids })
    }

    pub fn n_regions(&self) -> usize {
        self.maps.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.maps.ncols()
    }

    pub fn maps(&self) -> &Matrix {
        &self.maps
    }

    pub fn region_ids(&self) -> &[usize] {
        &self.region_ids
    }

    /// Number of voxels with nonzero weight in each map.
    pub fn support_sizes(&self) -> Vec<usize> {
        self.maps
            .row_iter()
            .map(|r| r.iter().filter(|&&w| w != 0.0).count())
            .collect()
    }

    /// True when no voxel carries weight in more than one map.
    pub fn is_disjoint(&self) -> bool {
        (0..self.n_voxels()).all(|v| self.maps.column(v).iter().filter(|&&w| w != 0.0).count() <= 1)
    }

    /// Keeps the `m` maps with the largest support (ties to the lower row).
    pub fn select_largest(&self, m: usize) -> Result<AtlasMaps> {
        if self.n_regions() < m {
            return Err(Error::invalid(format!(
                "atlas has {} regions, fewer than the {m} requested",
                self.n_regions()
            )));
        }
        let sizes = self.support_sizes();
        let mut order: Vec<usize> = (0..self.n_regions()).collect();
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let mut keep = order[..m].to_vec();
        keep.sort_unstable();
        let maps = self.maps.select_rows(keep.iter());
        let ids = keep.iter().map(|&r| self.region_ids[r]).collect();
        AtlasMaps::with_ids(maps, ids)
    }
}

/// Region signals, n timepoints × k regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTimeSeries(Matrix);

impl RegionTimeSeries {
    pub fn new(data: Matrix) -> Self {
        Self(data)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// n × c confound regressors with a label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundMatrix {
    data: Matrix,
    labels: Vec<String>,
}

impl ConfoundMatrix {
    pub fn new(data: Matrix, labels: Vec<String>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::invalid("confound matrix needs at least one column"));
        }
        if labels.len() != data.ncols() {
            return Err(Error::invalid("one label per confound column required"));
        }
        if !linalg::all_finite(&data) {
            return Err(Error::invalid("confound matrix contains non-finite values"));
        }
        Ok(Self { data, labels })
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_timepoints(&self) -> usize {
        self.data.nrows()
    }
}

/// Incrementally assembles a [`ConfoundMatrix`].
#[derive(Debug, Default)]
pub struct ConfoundBuilder {
    columns: Vec<linalg::Vector>,
    labels: Vec<String>,
}

impl ConfoundBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every column of `block`, labelled `prefix_<j>`.
    pub fn block(mut self, prefix: &str, block: &Matrix) -> Self {
        for (j, col) in block.column_iter().enumerate() {
            self.columns.push(col.into_owned());
            self.labels.push(format!("{prefix}_{j}"));
        }
        self
    }

    pub fn build(self) -> Result<ConfoundMatrix> {
        if self.columns.is_empty() {
            return Err(Error::invalid("confound matrix needs at least one column"));
        }
        let n = self.columns[0].len();
        if self.columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("confound columns differ in length"));
        }
        ConfoundMatrix::new(Matrix::from_columns(&self.columns), self.labels)
    }
}

/// Constant, linear and quadratic drift regressors on a [-1, 1] time axis.
pub fn drift_terms(n: usize) -> Matrix {
    let denom = (n.max(2) - 1) as f64;
    Matrix::from_fn(n, 3, |t, j| {
        let s = 2.0 * t as f64 / denom - 1.0;
        s.powi(j as i32)
    })
}

/// Least-squares region signals `U = argmin ‖Y − U V‖`.
///
/// Disjoint maps take the closed form `U_j = Σ v y / Σ v²`, which for
/// indicator maps is the plain region mean.
pub fn extract_region_signals(y: &VoxelTimeSeries, v: &AtlasMaps) -> Result<RegionTimeSeries> {
    let data = y.as_matrix();
    let maps = v.maps();
    if maps.ncols() != data.ncols() {
        return Err(Error::invalid(format!(
            "atlas covers {} voxels but data has {}",
            maps.ncols(),
            data.ncols()
        )));
    }
    let (n, k) = (data.nrows(), maps.nrows());
    if v.is_disjoint() {
        let mut u = Matrix::zeros(n, k);
        for r in 0..k {
            let support: Vec<(usize, f64)> = maps
                .row(r)
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i, w))
                .collect();
            let den: f64 = support.iter().map(|(_, w)| w * w).sum();
            for t in 0..n {
                let num: f64 = support.iter().map(|&(i, w)| w * data[(t, i)]).sum();
                u[(t, r)] = num / den;
            }
        }
        return Ok(RegionTimeSeries(u));
    }
    if k > maps.ncols() {
        return Err(Error::RankDeficient {
            rows: (maps.ncols()..k).collect(),
        });
    }
    let (_, dropped) = linalg::orthonormal_basis(&maps.transpose());
    if !dropped.is_empty() {
        return Err(Error::RankDeficient { rows: dropped });
    }
    let gram = maps * maps.transpose();
    let rhs = maps * data.transpose();
    let ut = linalg::spd_solve(&gram, &rhs)?;
    Ok(RegionTimeSeries(ut.transpose()))
}

/// Orthonormal basis `Q` of a confound matrix, reusable across signals.
#[derive(Debug, Clone)]
pub struct ConfoundBasis {
    q: Matrix,
    dropped: Vec<usize>,
}

impl ConfoundBasis {
    pub fn new(c: &ConfoundMatrix) -> Self {
        let (q, dropped) = linalg::orthonormal_basis(c.as_matrix());
        Self { q, dropped }
    }

    /// Confound columns skipped as linearly dependent on earlier ones.
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_timepoints(&self) -> usize {
        self.q.nrows()
    }

    /// `X − Q Qᵀ X`.
    pub fn residualize(&self, x: &Matrix) -> Result<Matrix> {
        if x.nrows() != self.q.nrows() {
            return Err(Error::invalid(format!(
                "signal has {} rows but confounds have {}",
                x.nrows(),
                self.q.nrows()
            )));
        }
        if self.q.ncols() == 0 {
            return Ok(x.clone());
        }
        let coef = self.q.transpose() * x;
        Ok(x - &self.q * coef)
    }
}

/// Removes from `x` its projection on the span of the confounds.
pub fn orthogonalize_confounds(x: &Matrix, c: &ConfoundMatrix) -> Result<Matrix> {
    if x.nrows() != c.n_timepoints() {
        return Err(Error::invalid(format!(
            "signal has {} rows but confounds have {}",
            x.nrows(),
            c.n_timepoints()
        )));
    }
    ConfoundBasis::new(c).residualize(x)
}

/// Output of [`detrend_standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub data: Matrix,
    /// Columns with no variance left after detrending; set to zero.
    pub constant_columns: Vec<usize>,
}

/// Per column: remove the least-squares line, divide by the sample standard
/// deviation. Columns that are (numerically) a pure line become zero and are
/// reported in `constant_columns`.
pub fn detrend_standardize(x: &Matrix) -> Result<Standardized> {
    let n = x.nrows();
    if n < 3 {
        return Err(Error::invalid("detrending needs at least 3 timepoints"));
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let sxx: f64 = (0..n).map(|t| (t as f64 - t_mean).powi(2)).sum();
    let mut out = Matrix::zeros(n, x.ncols());
    let mut constant_columns = Vec::new();
    for (j, col) in x.column_iter().enumerate() {
        let mean = col.mean();
        let sxy: f64 = col
            .iter()
            .enumerate()
            .map(|(t, &v)| (t as f64 - t_mean) * (v - mean))
            .sum();
        let slope = sxy / sxx;
        let resid: Vec<f64> = col
            .iter()
            .enumerate()
            .map(|(t, &v)| v - mean - slope * (t as f64 - t_mean))
            .collect();
        let rmean = linalg::mean(&resid);
        let centered: Vec<f64> = resid.iter().map(|r| r - rmean).collect();
        let sd = linalg::sample_sd(&centered);
        let scale = col.amax().max(f64::MIN_POSITIVE);
        if !(sd > 1e-10 * scale) {
            constant_columns.push(j);
            continue;
        }
        for (t, r) in centered.iter().enumerate() {
            out[(t, j)] = r / sd;
        }
    }
    Ok(Standardized {
        data: out,
        constant_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, seed: u64) -> Matrix {
        let mut g = rng::stream(seed, &[]);
        Matrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut g))
    }

    #[test]
    fn identity_maps_return_the_data() {
        let y = randn(7, 5, 1);
        let v = AtlasMaps::new(Matrix::identity(5, 5)).unwrap();
        let u = extract_region_signals(&VoxelTimeSeries::new(y.clone()).unwrap(), &v).unwrap();
        assert_eq!(u.as_matrix(), &y);
    }

    #[test]
    fn disjoint_binary_maps_give_region_means() {
        let y = Matrix::from_row_slice(
            3,
            4,
            &[
                1.0, 3.0, 10.0, 20.0, 2.0, 4.0, 0.0, 1.0, -1.0, 1.0, 5.0, 5.0,
            ],
        );
        let v = AtlasMaps::new(Matrix::from_row_slice(
            2,
            4,
            &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0],
        ))
        .unwrap();
        let u = extract_region_signals(&VoxelTimeSeries::new(y).unwrap(), &v).unwrap();
        assert_eq!(
            u.as_matrix(),
            &Matrix::from_row_slice(3, 2, &[2.0, 15.0, 3.0, 0.5, 0.0, 5.0])
        );
    }

    #[test]
    fn overlapping_maps_match_normal_equations_oracle() {
        // V = [[1,1,0],[0,1,1]], VVᵀ = [[2,1],[1,2]], (VVᵀ)⁻¹ = [[2,-1],[-1,2]]/3.
        let y = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 0.0, -1.0, 4.0, 2.5, 0.5, -2.0]);
        let v = AtlasMaps::new(Matrix::from_row_slice(
            2,
            3,
            &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0],
        ))
        .unwrap();
        let u = extract_region_signals(&VoxelTimeSeries::new(y.clone()).unwrap(), &v).unwrap();
        for t in 0..3 {
            let a = y[(t, 0)] + y[(t, 1)];
            let b = y[(t, 1)] + y[(t, 2)];
            let u0 = (2.0 * a - b) / 3.0;
            let u1 = (-a + 2.0 * b) / 3.0;
            assert!((u.as_matrix()[(t, 0)] - u0).abs() < 1e-10);
            assert!((u.as_matrix()[(t, 1)] - u1).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_maps_name_the_dependent_row() {
        let v = AtlasMaps::new(Matrix::from_row_slice(
            3,
            3,
            &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0],
        ))
        .unwrap();
        let y = VoxelTimeSeries::new(randn(4, 3, 2)).unwrap();
        match extract_region_signals(&y, &v) {
            Err(Error::RankDeficient { rows }) => assert_eq!(rows, vec![2]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn orthogonalization_cases() {
        let c = randn(50, 6, 7);
        let x = randn(50, 10, 8);
        let conf = ConfoundMatrix::new(c.clone(), (0..6).map(|i| i.to_string()).collect()).unwrap();
        let xr = orthogonalize_confounds(&x, &conf).unwrap();
        assert!((c.transpose() * &xr).amax() < 1e-10);

        let total = orthogonalize_confounds(&c, &conf).unwrap();
        assert!(total.amax() < 1e-12);

        // Idempotence.
        let twice = orthogonalize_confounds(&xr, &conf).unwrap();
        assert!((&twice - &xr).norm() < 1e-10);

        // Data already orthogonal to the confounds is left alone.
        let untouched = orthogonalize_confounds(&xr, &conf).unwrap();
        assert!((untouched - &xr).amax() < 1e-12);

        assert!(orthogonalize_confounds(&randn(49, 2, 1), &conf).is_err());
    }

    #[test]
    fn rank_deficient_confounds_are_tolerated() {
        let base = randn(30, 3, 4);
        let mut c = Matrix::zeros(30, 4);
        c.columns_mut(0, 3).copy_from(&base);
        let dup = base.column(0) + base.column(2) * 2.0;
        c.set_column(3, &dup);
        let conf = ConfoundMatrix::new(c.clone(), (0..4).map(|i| i.to_string()).collect()).unwrap();
        let basis = ConfoundBasis::new(&conf);
        assert_eq!(basis.dropped(), &[3]);
        let xr = basis.residualize(&randn(30, 5, 9)).unwrap();
        assert!((c.transpose() * xr).amax() < 1e-10);
    }

    #[test]
    fn pure_line_is_flagged_constant() {
        let x = Matrix::from_fn(100, 1, |t, _| 2.0 * t as f64 + 1.0);
        let out = detrend_standardize(&x).unwrap();
        assert_eq!(out.constant_columns, vec![0]);
        assert!(out.data.amax() == 0.0);
    }

    #[test]
    fn detrended_columns_have_zero_mean_unit_sd() {
        let x = randn(100, 3, 5) + Matrix::from_fn(100, 3, |t, j| 0.05 * t as f64 * j as f64 + 3.0);
        let out = detrend_standardize(&x).unwrap();
        for col in out.data.column_iter() {
            let v: Vec<f64> = col.iter().copied().collect();
            assert!(linalg::mean(&v).abs() < 1e-12);
            assert!((linalg::sample_sd(&v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_trendless_column_is_a_fixed_point() {
        // Build a column orthogonal to [1, t] by hand, then scale to sd 1.
        let n = 64;
        let raw = randn(n, 1, 12);
        let ones = Matrix::from_element(n, 1, 1.0);
        let t = Matrix::from_fn(n, 1, |i, _| i as f64);
        let conf = ConfoundMatrix::new(
            Matrix::from_columns(&[ones.column(0), t.column(0)]),
            vec!["c".into(), "t".into()],
        )
        .unwrap();
        let r = orthogonalize_confounds(&raw, &conf).unwrap();
        let v: Vec<f64> = r.iter().copied().collect();
        let x = r / linalg::sample_sd(&v);
        let out = detrend_standardize(&x).unwrap();
        assert!((out.data - x).amax() < 1e-12);
    }

    #[test]
    fn too_short_for_detrending() {
        assert!(detrend_standardize(&Matrix::zeros(2, 1)).is_err());
    }
}
