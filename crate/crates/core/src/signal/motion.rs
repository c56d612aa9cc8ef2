use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// 24-parameter motion expansion.
///
/// Column blocks, 6 columns each and in this order: the parameters `m`,
/// their squares `m²`, the one-timepoint lag `m(t−1)` (first row zero), and
/// the squared lag.
pub fn friston24(motion: &Matrix) -> Result<Matrix> {
    if motion.ncols() != 6 {
        return Err(Error::invalid(format!(
            "motion parameters need 6 columns, got {}",
            motion.ncols()
        )));
    }
    let n = motion.nrows();
    Ok(Matrix::from_fn(n, 24, |t, c| {
        let block = c / 6;
        let j = c % 6;
        let lagged = block >= 2;
        let v = if lagged {
            if t == 0 {
                0.0
            } else {
                motion[(t - 1, j)]
            }
        } else {
            motion[(t, j)]
        };
        if block % 2 == 1 {
            v * v
        } else {
            v
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_motion_gives_zero_regressors() {
        let out = friston24(&Matrix::zeros(10, 6)).unwrap();
        assert_eq!(out.shape(), (10, 24));
        assert_eq!(out.amax(), 0.0);
    }

    #[test]
    fn constant_motion() {
        let out = friston24(&Matrix::from_element(5, 6, 1.0)).unwrap();
        for t in 0..5 {
            for c in 0..12 {
                assert_eq!(out[(t, c)], 1.0);
            }
            for c in 12..24 {
                assert_eq!(out[(t, c)], if t == 0 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn squares_match_definition() {
        let mut g = rng::stream(4, &[]);
        let m = Matrix::from_fn(20, 6, |_, _| StandardNormal.sample(&mut g));
        let out = friston24(&m).unwrap();
        for t in 0..20 {
            // Column 7 (1-based) is the first squared column.
            assert_eq!(out[(t, 6)], out[(t, 0)] * out[(t, 0)]);
            for j in 0..6 {
                assert_eq!(out[(t, 18 + j)], out[(t, 12 + j)].powi(2));
            }
        }
    }

    #[test]
    fn wrong_width() {
        assert!(friston24(&Matrix::zeros(5, 3)).is_err());
    }
}
