use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// `Xcᵀ Xc` for one subject's n × p series, where each row (timepoint) of
/// `Xc` is centred across voxels. Summing these over subjects gives the Gram
/// matrix of the voxel profiles along the concatenated time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGram {
    gram: Matrix,
    n_timepoints: usize,
}

impl ProfileGram {
    pub fn from_series(series: &Matrix) -> Result<Self> {
        if !linalg::all_finite(series) {
            return Err(Error::invalid("series contains non-finite values"));
        }
        let mut centered = series.clone();
        for mut row in centered.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        Ok(Self {
            gram: centered.transpose() * &centered,
            n_timepoints: series.nrows(),
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.gram.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.n_timepoints
    }
}

/// PCA-reduced voxel profiles, p voxels × q components.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelProfiles {
    features: Matrix,
}

impl VoxelProfiles {
    /// Keeps at most `max_components` components (and never more than the
    /// concatenated time length). Scores are `u·√λ` from the eigenpairs of
    /// the summed Gram matrix, i.e. exact PCA scores of the concatenation.
    pub fn from_grams(grams: &[&ProfileGram], max_components: usize) -> Result<Self> {
        let first = grams
            .first()
            .ok_or_else(|| Error::invalid("atlas estimation needs at least one subject"))?;
        let p = first.n_voxels();
        if grams.iter().any(|g| g.n_voxels() != p) {
            return Err(Error::invalid("subjects differ in voxel count"));
        }
        let mut total = Matrix::zeros(p, p);
        let mut t = 0;
        for g in grams {
            total += &g.gram;
            t += g.n_timepoints;
        }
        let q = max_components.min(t).min(p).max(1);
        let (vals, vecs) = linalg::sym_eigen(&total);
        let mut features = Matrix::zeros(p, q);
        for c in 0..q {
            let src = p - 1 - c;
            let scale = vals[src].max(0.0).sqrt();
            let mut col = vecs.column(src) * scale;
            // Deterministic sign: largest-magnitude entry positive.
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col.neg_mut();
            }
            features.set_column(c, &col);
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_scores_preserve_pairwise_distances() {
        let x = Matrix::from_fn(6, 4, |t, v| ((t * 7 + v * 3) % 5) as f64 + 0.1 * v as f64);
        let g = ProfileGram::from_series(&x).unwrap();
        let prof = VoxelProfiles::from_grams(&[&g], 100).unwrap();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        for a in 0..4 {
            for b in 0..4 {
                let d_full = (xc.column(a) - xc.column(b)).norm();
                let d_pca = (prof.features().row(a) - prof.features().row(b)).norm();
                assert!((d_full - d_pca).abs() < 1e-9);
            }
        }
    }
}
