//! EM sufficient statistics from a smoother pass and the quadratic
//! majorizer of the MAP objective built from them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kalman::SmootherPass;
use crate::linalg::{l1_norm, symmetrize, SpdFactor};

/// The triplet `(Sigma, Phi, C)` of smoothed second moments that makes the
/// EM majorizer a quadratic in the transition matrix:
///
/// ```text
/// Sigma = (1/K) sum_{k=1}^{K} P_k^s + m_k^s (m_k^s)^T
/// Phi   = (1/K) sum_{k=1}^{K} P_{k-1}^s + m_{k-1}^s (m_{k-1}^s)^T
/// C     = (1/K) sum_{k=1}^{K} P_k^s G_{k-1}^T + m_k^s (m_{k-1}^s)^T
/// ```
#[derive(Debug, Clone)]
pub struct EStepStats {
    pub sigma: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub seq_length: usize,
}

impl EStepStats {
    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    /// `Phi`, ridge-regularized when its condition estimate exceeds `1e12`.
    ///
    /// `Phi` is positive definite in exact arithmetic (every summand carries a
    /// smoothed covariance); the ridge only guards against numerical
    /// degeneracy, adding `1e-10 tr(Phi)/n I` in that case.
    pub fn phi_for_inversion(&self) -> DMatrix<f64> {
        let n = self.phi.nrows();
        let needs_ridge = match SpdFactor::new(&self.phi, "Phi") {
            Ok(f) => f.cond_estimate() > 1e12,
            Err(_) => true,
        };
        if needs_ridge {
            let ridge = 1e-10 * self.phi.trace() / n as f64;
            &self.phi + DMatrix::identity(n, n) * ridge
        } else {
            self.phi.clone()
        }
    }
}

/// Accumulates `(Sigma, Phi, C)` from a smoother pass covering `k = 0..=K`.
pub fn compute_estep_stats(smoother: &SmootherPass, seq_length: usize) -> Result<EStepStats> {
    if smoother.seq_length() != seq_length
        || smoother.smoothed_means.len() != seq_length + 1
        || smoother.smoothed_covs.len() != seq_length + 1
    {
        return Err(Error::Dimension(format!(
            "smoother pass covers {} steps, expected {seq_length}",
            smoother.seq_length()
        )));
    }
    if seq_length == 0 {
        return Err(Error::Degenerate("cannot accumulate statistics over zero steps".into()));
    }

    let n = smoother.smoothed_means[0].len();
    let mut sigma = DMatrix::zeros(n, n);
    let mut phi = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);

    for k in 1..=seq_length {
        let m_k = &smoother.smoothed_means[k];
        let m_prev = &smoother.smoothed_means[k - 1];
        sigma += &smoother.smoothed_covs[k] + m_k * m_k.transpose();
        phi += &smoother.smoothed_covs[k - 1] + m_prev * m_prev.transpose();
        c += &smoother.smoothed_covs[k] * smoother.gains[k - 1].transpose()
            + m_k * m_prev.transpose();
    }

    let scale = 1.0 / seq_length as f64;
    Ok(EStepStats {
        sigma: symmetrize(&(sigma * scale)),
        phi: symmetrize(&(phi * scale)),
        c: c * scale,
        seq_length,
    })
}

/// Evaluates the majorizer at `A` (up to its additive constant):
///
/// ```text
/// (K/2) tr(Q^{-1} (Sigma - C A^T - A C^T + A Phi A^T)) + gamma ||A||_1
/// ```
pub fn majorizer_value(
    a: &DMatrix<f64>,
    stats: &EStepStats,
    q_noise: &DMatrix<f64>,
    gamma: f64,
) -> Result<f64> {
    let n = stats.dim();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension(format!(
            "A is {}x{}, statistics are {n}x{n}",
            a.nrows(),
            a.ncols()
        )));
    }
    let q_factor = SpdFactor::new(q_noise, "state-noise covariance Q")?;
    let inner = &stats.sigma
        - &stats.c * a.transpose()
        - a * stats.c.transpose()
        + a * &stats.phi * a.transpose();
    let quad = q_factor.solve(&inner).trace();
    Ok(0.5 * stats.seq_length as f64 * quad + gamma * l1_norm(a))
}
