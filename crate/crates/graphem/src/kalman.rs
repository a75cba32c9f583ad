//! Exact Kalman filter and Rauch-Tung-Striebel smoother for a fixed model,
//! plus the MAP objective built from the filter's innovation sequence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{l1_norm, symmetrize, SpdFactor};
use crate::model::LgssmModel;

const LN_2PI: f64 = 1.8378770664093453;

/// Forward-pass output: filtered moments for `k = 0..=K`, innovations and
/// their covariances for `k = 1..=K`, and the accumulated negative
/// log-likelihood `-log p(y_{1:K} | model)`.
#[derive(Debug, Clone)]
pub struct FilterPass {
    /// Filtered means `m_k`, with `means[0] = x0_mean`.
    pub means: Vec<DVector<f64>>,
    /// Filtered covariances `P_k`, with `covariances[0] = P0`.
    pub covariances: Vec<DMatrix<f64>>,
    /// Innovations `z_k = y_k - H A m_{k-1}` for `k = 1..=K`.
    pub innovations: Vec<DVector<f64>>,
    /// Innovation covariances `S_k = H P_k^- H^T + R` for `k = 1..=K`.
    pub innovation_covs: Vec<DMatrix<f64>>,
    /// `sum_k 1/2 log|2 pi S_k| + 1/2 z_k^T S_k^{-1} z_k`.
    pub neg_log_lik: f64,
}

impl FilterPass {
    /// Number of observations this pass covered.
    pub fn seq_length(&self) -> usize {
        self.innovations.len()
    }
}

/// Backward-pass output: smoothed moments for `k = 0..=K` and the smoothing
/// gains `G_k` for `k = 0..K`.
#[derive(Debug, Clone)]
pub struct SmootherPass {
    pub smoothed_means: Vec<DVector<f64>>,
    pub smoothed_covs: Vec<DMatrix<f64>>,
    /// `G_k = P_k A^T (A P_k A^T + Q)^{-1}` for `k = 0..K`.
    pub gains: Vec<DMatrix<f64>>,
}

impl SmootherPass {
    pub fn seq_length(&self) -> usize {
        self.gains.len()
    }
}

/// Runs the standard predict/update recursion over `observations`.
///
/// Covariances are re-symmetrized after every update to control drift over
/// long sequences. Fails when an innovation covariance is numerically
/// singular, naming the offending step (1-based).
pub fn kalman_filter(model: &LgssmModel, observations: &[DVector<f64>]) -> Result<FilterPass> {
    let n_y = model.n_y();
    if observations.is_empty() {
        return Err(Error::Degenerate("observation sequence is empty".into()));
    }
    for (k, y) in observations.iter().enumerate() {
        if y.len() != n_y {
            return Err(Error::Dimension(format!(
                "observation {} has dimension {}, expected {n_y}",
                k + 1,
                y.len()
            )));
        }
    }

    let seq_length = observations.len();
    let mut means = Vec::with_capacity(seq_length + 1);
    let mut covariances = Vec::with_capacity(seq_length + 1);
    let mut innovations = Vec::with_capacity(seq_length);
    let mut innovation_covs = Vec::with_capacity(seq_length);
    let mut neg_log_lik = 0.0;

    means.push(model.x0_mean.clone());
    covariances.push(model.p0.clone());

    let h_t = model.h.transpose();
    let a_t = model.a.transpose();

    for (idx, y) in observations.iter().enumerate() {
        let step = idx + 1;

        // Predict.
        let m_pred = &model.a * means.last().expect("nonempty");
        let p_pred = symmetrize(&(&model.a * covariances.last().expect("nonempty") * &a_t + &model.q));

        // Update.
        let z = y - &model.h * &m_pred;
        let s = symmetrize(&(&model.h * &p_pred * &h_t + &model.r));
        let s_factor = match SpdFactor::new(&s, "innovation covariance") {
            Ok(f) if f.is_well_conditioned() => f,
            Ok(f) => {
                return Err(Error::SingularInnovation { step, cond: f.cond_estimate() })
            }
            Err(_) => return Err(Error::SingularInnovation { step, cond: f64::INFINITY }),
        };

        let s_inv_z = s_factor.solve_vec(&z);
        neg_log_lik += 0.5 * (n_y as f64 * LN_2PI + s_factor.log_det() + z.dot(&s_inv_z));

        // Gain K = P^- H^T S^{-1}, via S K^T = H P^-.
        let gain = s_factor.solve(&(&model.h * &p_pred)).transpose();

        let m_filt = &m_pred + &gain * &z;
        let p_filt = symmetrize(&(&p_pred - &gain * &s * gain.transpose()));

        means.push(m_filt);
        covariances.push(p_filt);
        innovations.push(z);
        innovation_covs.push(s);
    }

    Ok(FilterPass { means, covariances, innovations, innovation_covs, neg_log_lik })
}

/// Runs the RTS backward recursion on a completed filter pass.
///
/// `filter_pass` must come from `kalman_filter` on the same model and
/// observations. Fails when a predicted covariance `A P_k A^T + Q` is
/// numerically singular, naming the step.
pub fn rts_smoother(model: &LgssmModel, filter_pass: &FilterPass) -> Result<SmootherPass> {
    let seq_length = filter_pass.seq_length();
    if filter_pass.means.len() != seq_length + 1 || filter_pass.covariances.len() != seq_length + 1
    {
        return Err(Error::Dimension(
            "filter pass has inconsistent sequence lengths".into(),
        ));
    }

    let mut smoothed_means = filter_pass.means.clone();
    let mut smoothed_covs = filter_pass.covariances.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); seq_length];

    let a_t = model.a.transpose();

    for k in (0..seq_length).rev() {
        let p_k = &filter_pass.covariances[k];
        let p_pred = symmetrize(&(&model.a * p_k * &a_t + &model.q));
        let factor = match SpdFactor::new(&p_pred, "predicted covariance") {
            Ok(f) if f.is_well_conditioned() => f,
            Ok(f) => {
                return Err(Error::SingularPrediction { step: k, cond: f.cond_estimate() })
            }
            Err(_) => return Err(Error::SingularPrediction { step: k, cond: f64::INFINITY }),
        };

        // G_k = P_k A^T P_pred^{-1}, via P_pred G_k^T = A P_k.
        let gain = factor.solve(&(&model.a * p_k)).transpose();

        smoothed_means[k] = &filter_pass.means[k]
            + &gain * (&smoothed_means[k + 1] - &model.a * &filter_pass.means[k]);
        smoothed_covs[k] =
            symmetrize(&(p_k + &gain * (&smoothed_covs[k + 1] - &p_pred) * gain.transpose()));
        gains[k] = gain;
    }

    Ok(SmootherPass { smoothed_means, smoothed_covs, gains })
}

/// The MAP objective `gamma * ||A||_1 - log p(y_{1:K} | A)`, evaluated by a
/// fresh filter pass for the model's current transition matrix.
pub fn map_objective(
    model: &LgssmModel,
    observations: &[DVector<f64>],
    gamma: f64,
) -> Result<f64> {
    let pass = kalman_filter(model, observations)?;
    Ok(gamma * l1_norm(&model.a) + pass.neg_log_lik)
}
