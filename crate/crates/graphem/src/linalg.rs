//! Small dense linear-algebra helpers used throughout the crate.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Condition numbers beyond this are treated as numerically singular.
pub const CONDITION_LIMIT: f64 = 1e14;

/// `(M + M^T) / 2`, the symmetric part of `M`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Elementwise l1 norm, `sum |m_ij|`.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Largest entry magnitude, 0 for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Whether `M` is symmetric to within a relative tolerance on its magnitude.
pub fn is_symmetric_within(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factorization of a symmetric positive-definite matrix together
/// with a cheap condition estimate from the factor diagonal.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    cond_estimate: f64,
}

impl SpdFactor {
    /// Factorizes `M`, failing when it is not positive definite or its
    /// condition estimate exceeds [`CONDITION_LIMIT`].
    pub fn new(m: &DMatrix<f64>, context: &str) -> Result<Self> {
        let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Singular {
            context: context.to_string(),
        })?;
        let l = chol.l_dirty();
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for i in 0..m.nrows() {
            let d = l[(i, i)];
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        // cond_2(M) ~ (max diag(L) / min diag(L))^2 for an SPD matrix.
        let cond_estimate = if dmin > 0.0 {
            (dmax / dmin).powi(2)
        } else {
            f64::INFINITY
        };
        Ok(Self { chol, cond_estimate })
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn is_well_conditioned(&self) -> bool {
        self.cond_estimate <= CONDITION_LIMIT
    }

    /// Solves `M X = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `M x = b` for a single column.
    pub fn solve_vec(&self, b: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        self.chol.solve(b)
    }

    /// `log det M`, from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
    }

    /// Explicit inverse; prefer `solve` where possible.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetrize_is_symmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = symmetrize(&m);
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        assert_relative_eq!(s[(0, 1)], 2.5);
    }

    #[test]
    fn l1_norm_sums_magnitudes() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.0, 3.0]);
        assert_relative_eq!(l1_norm(&m), 6.0);
    }

    #[test]
    fn spd_factor_solves_and_estimates_condition() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = SpdFactor::new(&m, "test matrix").unwrap();
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = f.solve(&b);
        assert_relative_eq!((&m * &x - &b).norm(), 0.0, epsilon = 1e-12);
        assert!(f.is_well_conditioned());
        let det: f64 = 4.0 * 3.0 - 1.0;
        assert_relative_eq!(f.log_det(), det.ln(), epsilon = 1e-12);
    }

    #[test]
    fn spd_factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SpdFactor::new(&m, "indefinite").is_err());
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert_relative_eq!(spectral_norm(&m), 5.0, epsilon = 1e-12);
    }
}
