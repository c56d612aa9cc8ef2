//! Fixed-length temporal descriptors of 1-D signals (movement control).
//!
//! Each signal yields [`DESCRIPTORS_PER_SIGNAL`] values, in the order of
//! [`DESCRIPTOR_NAMES`]. A channel contributes its raw series followed by its
//! first difference, so a channel block holds 28 values and the whole vector
//! has `channels × 2 × 14` entries.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DESCRIPTORS_PER_SIGNAL: usize = 14;

pub const DESCRIPTOR_NAMES: [&str; DESCRIPTORS_PER_SIGNAL] = [
    "ar1_coef",
    "ar1_resid_var",
    "ar2_coef1",
    "ar2_coef2",
    "ar2_resid_var",
    "kurtosis",
    "skewness",
    "entropy",
    "mean_minus_median",
    "fourier_amp1",
    "fourier_amp2",
    "fourier_amp3",
    "fourier_amp4",
    "high_freq_power",
];

const MIN_LENGTH: usize = 16;
const HIST_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptors {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    /// Names of descriptors that were degenerate and set to zero.
    pub degenerate: Vec<String>,
}

/// Descriptors for every column of `series` (n × channels).
pub fn extract_temporal_descriptors(series: &Matrix) -> Result<Descriptors> {
    let n = series.nrows();
    if n < MIN_LENGTH {
        return Err(Error::invalid(format!(
            "series of length {n} too short; need at least {MIN_LENGTH}"
        )));
    }
    let mut out = Descriptors {
        values: Vec::with_capacity(series.ncols() * 2 * DESCRIPTORS_PER_SIGNAL),
        names: Vec::new(),
        degenerate: Vec::new(),
    };
    for (c, col) in series.column_iter().enumerate() {
        let raw: Vec<f64> = col.iter().copied().collect();
        let grad: Vec<f64> = raw.windows(2).map(|w| w[1] - w[0]).collect();
        for (kind, x) in [("raw", &raw), ("grad", &grad)] {
            let prefix = format!("ch{c}_{kind}");
            let mut flags = Vec::new();
            let vals = signal_descriptors(x, &mut flags);
            out.values.extend_from_slice(&vals);
            out.names
                .extend(DESCRIPTOR_NAMES.iter().map(|d| format!("{prefix}_{d}")));
            out.degenerate
                .extend(flags.into_iter().map(|d| format!("{prefix}_{d}")));
        }
    }
    Ok(out)
}

/// Reduces the six motion parameters to mean translation and mean rotation.
pub fn motion_summary_channels(motion: &Matrix) -> Result<Matrix> {
    if motion.ncols() != 6 {
        return Err(Error::invalid(format!(
            "motion parameters need 6 columns, got {}",
            motion.ncols()
        )));
    }
    Ok(Matrix::from_fn(motion.nrows(), 2, |t, c| {
        (0..3).map(|j| motion[(t, 3 * c + j)]).sum::<f64>() / 3.0
    }))
}

/// The 56-value movement descriptor vector: 2 summary channels × (raw,
/// gradient) × 14.
pub fn movement_descriptors(motion: &Matrix) -> Result<Descriptors> {
    extract_temporal_descriptors(&motion_summary_channels(motion)?)
}

fn signal_descriptors(x: &[f64], flags: &mut Vec<&'static str>) -> [f64; DESCRIPTORS_PER_SIGNAL] {
    let n = x.len() as f64;
    let mean = linalg::mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let m2 = c.iter().map(|v| v * v).sum::<f64>() / n;
    let scale = x
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let flat = !(m2.sqrt() > 1e-12 * scale);

    let mut d = [0.0; DESCRIPTORS_PER_SIGNAL];
    match ar_fit(&c, 1) {
        Some((coef, var)) => {
            d[0] = coef[0];
            d[1] = var;
        }
        None => flags.extend(["ar1_coef", "ar1_resid_var"]),
    }
    match ar_fit(&c, 2) {
        Some((coef, var)) => {
            d[2] = coef[0];
            d[3] = coef[1];
            d[4] = var;
        }
        None => flags.extend(["ar2_coef1", "ar2_coef2", "ar2_resid_var"]),
    }
    if flat {
        flags.extend(["kurtosis", "skewness"]);
    } else {
        let m3 = c.iter().map(|v| v.powi(3)).sum::<f64>() / n;
        let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / n;
        d[5] = m4 / (m2 * m2) - 3.0;
        d[6] = m3 / m2.powf(1.5);
    }
    d[7] = histogram_entropy(x);
    d[8] = mean - median(x);

    if flat {
        flags.push("high_freq_power");
        return d;
    }
    // Bins k >= 1 are unaffected by centring; centring keeps them exact zero
    // for flat input.
    let power = dft_power(&c);
    let amp_scale = 2.0 / n;
    for k in 1..=4 {
        d[8 + k] = power.get(k).map_or(0.0, |p| p.sqrt() * amp_scale);
    }
    let total: f64 = power.iter().skip(1).sum();
    if total > 0.0 {
        d[13] = power.iter().skip(5).sum::<f64>() / total;
    } else {
        flags.push("high_freq_power");
    }
    d
}

/// Least-squares AR(order) fit without intercept on a centred series.
/// Returns coefficients and residual variance, or `None` when degenerate.
fn ar_fit(c: &[f64], order: usize) -> Option<(Vec<f64>, f64)> {
    let n = c.len();
    if n <= order + 1 {
        return None;
    }
    let rows = order..n;
    let mut g = Matrix::zeros(order, order);
    let mut b = Matrix::zeros(order, 1);
    for t in rows.clone() {
        for i in 0..order {
            b[(i, 0)] += c[t] * c[t - 1 - i];
            for j in 0..order {
                g[(i, j)] += c[t - 1 - i] * c[t - 1 - j];
            }
        }
    }
    let trace: f64 = (0..order).map(|i| g[(i, i)]).sum();
    if !(trace > 0.0) || g.determinant().abs() <= 1e-12 * trace.powi(order as i32) {
        return None;
    }
    let coef = g.lu().solve(&b)?;
    let coef: Vec<f64> = coef.iter().copied().collect();
    let resid: f64 = rows
        .clone()
        .map(|t| {
            let pred: f64 = (0..order).map(|i| coef[i] * c[t - 1 - i]).sum();
            (c[t] - pred).powi(2)
        })
        .sum::<f64>()
        / rows.len() as f64;
    Some((coef, resid))
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        (s[m - 1] + s[m]) / 2.0
    } else {
        s[m]
    }
}

/// Shannon entropy (nats) of a 16-bin equal-width histogram over [min, max].
fn histogram_entropy(x: &[f64]) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let mut counts = [0usize; HIST_BINS];
    let width = (hi - lo) / HIST_BINS as f64;
    for &v in x {
        let b = (((v - lo) / width) as usize).min(HIST_BINS - 1);
        counts[b] += 1;
    }
    let n = x.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// |X_k|² for k = 0..=n/2 by direct DFT.
fn dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            re * re + im * im
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn column(v: Vec<f64>) -> Matrix {
        Matrix::from_vec(v.len(), 1, v)
    }

    #[test]
    fn gaussian_noise_has_null_shape_moments() {
        let mut g = rng::stream(21, &[]);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut g)).collect();
        let d = extract_temporal_descriptors(&column(x)).unwrap();
        let kurt = d.values[5];
        let skew = d.values[6];
        assert!(kurt.abs() < 0.15, "kurtosis {kurt}");
        assert!(skew.abs() < 0.1, "skewness {skew}");
        // White noise: AR(1) coefficient near zero, gradient AR(1) near -0.5.
        assert!(d.values[0].abs() < 0.05);
        assert!((d.values[DESCRIPTORS_PER_SIGNAL] + 0.5).abs() < 0.05);
    }

    #[test]
    fn constant_series_is_flagged() {
        let d = extract_temporal_descriptors(&column(vec![4.0; 32])).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
        assert!(d.degenerate.iter().any(|n| n == "ch0_raw_ar1_coef"));
        assert!(d.degenerate.iter().any(|n| n == "ch0_grad_ar2_coef2"));
    }

    #[test]
    fn sine_concentrates_in_its_bin() {
        let n = 64;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * PI * 2.0 * t as f64 / n as f64).sin())
            .collect();
        let d = extract_temporal_descriptors(&column(x)).unwrap();
        let amps = &d.values[9..13];
        assert!((amps[1] - 1.0).abs() < 1e-9);
        for (k, a) in amps.iter().enumerate() {
            if k != 1 {
                assert!(amps[1] > 10.0 * a);
            }
        }
    }

    #[test]
    fn movement_vector_has_56_entries() {
        let mut g = rng::stream(2, &[]);
        let m = Matrix::from_fn(40, 6, |_, _| StandardNormal.sample(&mut g));
        let d = movement_descriptors(&m).unwrap();
        assert_eq!(d.values.len(), 56);
        assert_eq!(d.names.len(), 56);
        assert_eq!(d.names[0], "ch0_raw_ar1_coef");
        assert_eq!(d.names[14], "ch0_grad_ar1_coef");
        assert_eq!(d.names[28], "ch1_raw_ar1_coef");
    }

    #[test]
    fn short_series_rejected() {
        assert!(extract_temporal_descriptors(&Matrix::zeros(15, 1)).is_err());
    }

    #[test]
    fn ar1_recovers_coefficient() {
        let mut g = rng::stream(5, &[]);
        let mut x = vec![0.0; 5000];
        for t in 1..x.len() {
            let e: f64 = StandardNormal.sample(&mut g);
            x[t] = 0.7 * x[t - 1] + e;
        }
        let d = extract_temporal_descriptors(&column(x)).unwrap();
        assert!((d.values[0] - 0.7).abs() < 0.03);
        assert!((d.values[1] - 1.0).abs() < 0.1);
    }
}
