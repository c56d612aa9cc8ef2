use crate::error::{Error, Result};
use crate::lattice::LatticeDims;
use crate::linalg::Matrix;

/// σ in lattice units for a full-width-half-maximum in millimetres.
pub fn fwhm_to_sigma(fwhm_mm: f64, voxel_size_mm: f64) -> f64 {
    fwhm_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()) / voxel_size_mm
}

/// Normalized 1-D Gaussian taps for offsets |i| ≤ 4σ.
fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).floor() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable 3-D Gaussian smoothing of each timepoint (row) of an n × p
/// series, with edge replication at the lattice border.
pub fn gaussian_smooth(
    y: &Matrix,
    dims: LatticeDims,
    fwhm_mm: f64,
    voxel_size_mm: f64,
) -> Result<Matrix> {
    if !(fwhm_mm >= 0.0) {
        return Err(Error::invalid(format!("negative FWHM {fwhm_mm}")));
    }
    if !(voxel_size_mm > 0.0) {
        return Err(Error::invalid(format!(
            "voxel size {voxel_size_mm} must be positive"
        )));
    }
    if y.ncols() != dims.n_voxels() {
        return Err(Error::invalid(format!(
            "series has {} voxels, lattice {}",
            y.ncols(),
            dims.n_voxels()
        )));
    }
    if fwhm_mm == 0.0 {
        return Ok(y.clone());
    }
    let taps = kernel(fwhm_to_sigma(fwhm_mm, voxel_size_mm));
    let radius = (taps.len() / 2) as isize;
    let mut out = y.clone();
    let mut buf = vec![0.0; dims.n_voxels()];
    let mut vol = vec![0.0; dims.n_voxels()];
    let extents = [dims.nx, dims.ny, dims.nz];
    for t in 0..y.nrows() {
        for (v, slot) in vol.iter_mut().enumerate() {
            *slot = out[(t, v)];
        }
        for axis in 0..3 {
            let len = extents[axis] as isize;
            for (v, slot) in buf.iter_mut().enumerate() {
                let (x, yy, z) = dims.coords(v);
                let mut c = [x, yy, z];
                let pos = c[axis] as isize;
                let mut acc = 0.0;
                for (k, w) in taps.iter().enumerate() {
                    let off = k as isize - radius;
                    c[axis] = (pos + off).clamp(0, len - 1) as usize;
                    acc += w * vol[dims.index(c[0], c[1], c[2])];
                }
                *slot = acc;
            }
            std::mem::swap(&mut vol, &mut buf);
        }
        for (v, val) in vol.iter().enumerate() {
            out[(t, v)] = *val;
        }
    }
    Ok(out)
}
