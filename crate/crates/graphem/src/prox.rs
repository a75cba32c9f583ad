//! Proximity operators for the M-step objective and the Douglas-Rachford
//! splitting solver that combines them.
//!
//! The M-step objective splits as `f1 + f2` with
//!
//! ```text
//! f1(A) = (K/2) tr(Q^{-1} (Sigma - C A^T - A C^T + A Phi A^T))
//! f2(A) = gamma ||A||_1
//! ```
//!
//! `prox` of `f2` is elementwise soft thresholding. `prox` of `theta f1` at
//! `A~` solves the first-order condition
//!
//! ```text
//! theta K Q^{-1} (A Phi - C) + A - A~ = 0,
//! ```
//!
//! a linear matrix equation `X A Phi + A = A~ + X C` with `X = theta K Q^{-1}`.
//! For general `Q` it is solved through the column-major vectorization
//! `(Phi (x) X + I) vec(A) = vec(A~ + X C)`; for isotropic `Q = sigma^2 I` it
//! collapses to `A = (theta K / sigma^2 C + A~)(theta K / sigma^2 Phi + I)^{-1}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estep::EStepStats;
use crate::linalg::{symmetrize, SpdFactor, CONDITION_LIMIT};

/// M-step quadratic term together with the state-noise covariance it is
/// weighted by. `isotropic_variance` is `sigma^2` when `Q = sigma^2 I`,
/// unlocking the cheap prox path.
#[derive(Debug, Clone)]
pub struct QuadraticProxProblem {
    pub stats: EStepStats,
    pub q_noise: DMatrix<f64>,
    pub isotropic_variance: Option<f64>,
}

impl QuadraticProxProblem {
    /// Builds the problem, detecting an isotropic `Q` automatically.
    pub fn new(stats: EStepStats, q_noise: DMatrix<f64>) -> Result<Self> {
        let n = stats.dim();
        if q_noise.nrows() != n || q_noise.ncols() != n {
            return Err(Error::Dimension(format!(
                "Q is {}x{}, statistics are {n}x{n}",
                q_noise.nrows(),
                q_noise.ncols()
            )));
        }
        let isotropic_variance = detect_isotropic(&q_noise);
        Ok(Self { stats, q_noise, isotropic_variance })
    }

    /// Same problem with the isotropic shortcut disabled, forcing the
    /// general vectorized solve. Used to cross-check the two paths.
    pub fn forced_general(mut self) -> Self {
        self.isotropic_variance = None;
        self
    }

    /// `f1(A)`, the quadratic part of the M-step objective.
    pub fn quadratic_value(&self, a: &DMatrix<f64>) -> Result<f64> {
        crate::estep::majorizer_value(a, &self.stats, &self.q_noise, 0.0)
    }
}

fn detect_isotropic(q: &DMatrix<f64>) -> Option<f64> {
    let n = q.nrows();
    let sigma2 = q.trace() / n as f64;
    if sigma2 <= 0.0 {
        return None;
    }
    let tol = 1e-12 * sigma2;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { sigma2 } else { 0.0 };
            if (q[(i, j)] - target).abs() > tol {
                return None;
            }
        }
    }
    Some(sigma2)
}

/// Douglas-Rachford parameters: relaxation `theta` in `(0, 2)`, stopping
/// tolerance on the objective change, and an iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct DrConfig {
    pub theta: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self { theta: 1.0, tolerance: 1e-3, max_iters: 5000 }
    }
}

impl DrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 2.0) {
            return Err(Error::Config(format!(
                "DR relaxation theta must lie in (0, 2), got {}",
                self.theta
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("DR tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("DR iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Elementwise soft thresholding, `sign(m) max(0, |m| - threshold)`.
///
/// This is the proximity operator of `theta * gamma ||.||_1` when
/// `threshold = theta * gamma`.
pub fn soft_threshold(m: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    assert!(threshold >= 0.0, "threshold must be nonnegative");
    m.map(|v| v.signum() * (v.abs() - threshold).max(0.0))
}

enum ProxFactor {
    /// `(c Phi + I)` Cholesky factor with `c = theta K / sigma^2`.
    Isotropic { coeff: f64, factor: SpdFactor },
    /// LU-style factorization of `Phi (x) (theta K Q^{-1}) + I` plus the
    /// precomputed `theta K Q^{-1}`.
    General { x_mat: DMatrix<f64>, factor: SpdFactor },
}

/// Proximity operator of `theta f1`, with the linear system factorized once
/// so repeated applications inside the inner solver are cheap.
pub struct QuadraticProx {
    factor: ProxFactor,
    c: DMatrix<f64>,
}

impl QuadraticProx {
    pub fn new(problem: &QuadraticProxProblem, theta: f64) -> Result<Self> {
        assert!(theta > 0.0, "prox scale theta must be positive");
        let stats = &problem.stats;
        let n = stats.dim();
        let k = stats.seq_length as f64;

        let factor = match problem.isotropic_variance {
            Some(sigma2) => {
                let coeff = theta * k / sigma2;
                let system = symmetrize(&(&stats.phi * coeff + DMatrix::identity(n, n)));
                let factor = spd_prox_factor(&system)?;
                ProxFactor::Isotropic { coeff, factor }
            }
            None => {
                let q_factor = SpdFactor::new(&problem.q_noise, "state-noise covariance Q")?;
                let x_mat = q_factor.inverse() * (theta * k);
                // Phi PSD and X PD make the system matrix symmetric with
                // eigenvalues >= 1; Cholesky both factors and certifies it.
                let system = symmetrize(
                    &(stats.phi.kronecker(&x_mat) + DMatrix::identity(n * n, n * n)),
                );
                let factor = spd_prox_factor(&system)?;
                ProxFactor::General { x_mat, factor }
            }
        };

        Ok(Self { factor, c: stats.c.clone() })
    }

    /// `prox_{theta f1}(a_tilde)`.
    pub fn apply(&self, a_tilde: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            ProxFactor::Isotropic { coeff, factor } => {
                // A (c Phi + I) = c C + A~, solved through the transpose.
                let rhs = (&self.c * *coeff + a_tilde).transpose();
                factor.solve(&rhs).transpose()
            }
            ProxFactor::General { x_mat, factor } => {
                let n = a_tilde.nrows();
                let rhs = a_tilde + x_mat * &self.c;
                let vec_rhs = DMatrix::from_column_slice(n * n, 1, rhs.as_slice());
                let solution = factor.solve(&vec_rhs);
                DMatrix::from_column_slice(n, n, solution.as_slice())
            }
        }
    }
}

fn spd_prox_factor(system: &DMatrix<f64>) -> Result<SpdFactor> {
    match SpdFactor::new(system, "prox linear system") {
        Ok(f) if f.cond_estimate() <= CONDITION_LIMIT => Ok(f),
        Ok(f) => Err(Error::SingularProxSystem { cond: f.cond_estimate() }),
        Err(_) => Err(Error::SingularProxSystem { cond: f64::INFINITY }),
    }
}

/// One-shot convenience wrapper around [`QuadraticProx`].
pub fn prox_quadratic(
    problem: &QuadraticProxProblem,
    a_tilde: &DMatrix<f64>,
    theta: f64,
) -> Result<DMatrix<f64>> {
    Ok(QuadraticProx::new(problem, theta)?.apply(a_tilde))
}

/// Result of a Douglas-Rachford run.
#[derive(Debug, Clone)]
pub struct DrOutcome {
    pub solution: DMatrix<f64>,
    pub iters: usize,
    pub converged: bool,
}

/// Douglas-Rachford splitting for `min f1 + f2` given the proximity
/// operators of `theta f1` and `theta f2`:
///
/// ```text
/// A_n = prox_{theta f2}(Z_n)
/// V_n = prox_{theta f1}(2 A_n - Z_n)
/// Z_{n+1} = Z_n + theta (V_n - A_n)
/// ```
///
/// Stops when the objective change between consecutive `A_n` falls to
/// `config.tolerance` *and* the fixed-point residual `||V_n - A_n||_F` is
/// small at the same scale. The objective of `A_n` can plateau exactly (soft
/// thresholding pins entries at zero while `Z_n` still moves), so the
/// residual — which drives the `Z` update — is what certifies convergence.
/// Hitting the iteration cap is reported through `converged = false`, not an
/// error.
pub fn douglas_rachford(
    prox_f1: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    prox_f2: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    objective: impl Fn(&DMatrix<f64>) -> f64,
    config: &DrConfig,
    z0: DMatrix<f64>,
) -> Result<DrOutcome> {
    config.validate()?;

    let mut z = z0;
    let mut a = prox_f2(&z);
    let mut obj = objective(&a);

    for n in 1..=config.max_iters {
        let step = prox_f1(&(2.0 * &a - &z)) - &a;
        let residual = step.norm();
        z += step * config.theta;

        let a_next = prox_f2(&z);
        let obj_next = objective(&a_next);
        let delta = (obj_next - obj).abs();
        let a_scale = 1.0 + a_next.norm();
        a = a_next;
        obj = obj_next;

        if delta <= config.tolerance && residual <= config.tolerance * a_scale {
            return Ok(DrOutcome { solution: a, iters: n, converged: true });
        }
    }

    Ok(DrOutcome { solution: a, iters: config.max_iters, converged: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn example_stats() -> EStepStats {
        EStepStats {
            sigma: dmatrix![2.0, 0.3; 0.3, 1.5],
            phi: dmatrix![1.2, 0.2; 0.2, 0.9],
            c: dmatrix![0.5, 0.1; -0.2, 0.4],
            seq_length: 6,
        }
    }

    #[test]
    fn soft_threshold_is_identity_at_zero_input() {
        let z = DMatrix::zeros(3, 3);
        assert_eq!(soft_threshold(&z, 0.7), z);
    }

    #[test]
    fn soft_threshold_shrinks_toward_zero() {
        let m = dmatrix![0.3, -1.2; 0.5, 0.0];
        let out = soft_threshold(&m, 0.5);
        assert_relative_eq!(out[(0, 0)], 0.0);
        assert_relative_eq!(out[(0, 1)], -0.7);
        assert_relative_eq!(out[(1, 0)], 0.0);
        assert_relative_eq!(out[(1, 1)], 0.0);
    }

    #[test]
    fn isotropy_detection() {
        let iso = DMatrix::identity(3, 3) * 0.25;
        assert_relative_eq!(detect_isotropic(&iso).unwrap(), 0.25);
        let mut aniso = iso.clone();
        aniso[(0, 0)] = 0.3;
        assert!(detect_isotropic(&aniso).is_none());
    }

    #[test]
    fn prox_fixes_the_unregularized_minimizer() {
        // prox of a function at its own minimizer is the minimizer.
        let stats = example_stats();
        let a_star = &stats.c * stats.phi_for_inversion().try_inverse().unwrap();
        let problem = QuadraticProxProblem::new(stats, DMatrix::identity(2, 2) * 0.5).unwrap();
        for theta in [0.3, 1.0, 1.7] {
            let out = prox_quadratic(&problem, &a_star, theta).unwrap();
            assert_relative_eq!((out - &a_star).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn scalar_isotropic_prox_matches_hand_formula() {
        // K=2, sigma^2=1, Phi=1, C=0.5, A~=0, theta=1 -> (2*0.5 + 0)/(2*1 + 1) = 1/3.
        let stats = EStepStats {
            sigma: dmatrix![1.0],
            phi: dmatrix![1.0],
            c: dmatrix![0.5],
            seq_length: 2,
        };
        let problem = QuadraticProxProblem::new(stats, dmatrix![1.0]).unwrap();
        let out = prox_quadratic(&problem, &DMatrix::zeros(1, 1), 1.0).unwrap();
        assert_relative_eq!(out[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn general_path_agrees_with_isotropic_path() {
        let stats = example_stats();
        let q = DMatrix::identity(2, 2) * 0.7;
        let iso = QuadraticProxProblem::new(stats.clone(), q.clone()).unwrap();
        assert!(iso.isotropic_variance.is_some());
        let gen = QuadraticProxProblem::new(stats, q).unwrap().forced_general();
        let a_tilde = dmatrix![0.4, -0.3; 0.2, 0.8];
        for theta in [0.5, 1.0, 1.5] {
            let out_iso = prox_quadratic(&iso, &a_tilde, theta).unwrap();
            let out_gen = prox_quadratic(&gen, &a_tilde, theta).unwrap();
            assert_relative_eq!((out_iso - out_gen).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn prox_satisfies_first_order_optimality() {
        let stats = example_stats();
        let q = dmatrix![0.5, 0.1; 0.1, 0.8];
        let k = stats.seq_length as f64;
        let problem = QuadraticProxProblem::new(stats.clone(), q.clone()).unwrap();
        assert!(problem.isotropic_variance.is_none());
        let a_tilde = dmatrix![1.0, -0.5; 0.3, 0.2];
        let theta = 0.8;
        let a_star = prox_quadratic(&problem, &a_tilde, theta).unwrap();
        let q_inv = q.try_inverse().unwrap();
        let residual =
            &q_inv * (&a_star * &stats.phi - &stats.c) * (theta * k) + &a_star - &a_tilde;
        assert!(residual.norm() <= 1e-8 * (1.0 + a_tilde.norm()));
    }

    #[test]
    fn dr_with_trivial_f2_recovers_the_quadratic_minimizer() {
        let stats = example_stats();
        let a_star = &stats.c * stats.phi_for_inversion().try_inverse().unwrap();
        let problem = QuadraticProxProblem::new(stats, DMatrix::identity(2, 2) * 0.5).unwrap();
        let prox1 = QuadraticProx::new(&problem, 1.0).unwrap();
        let config = DrConfig { tolerance: 1e-12, max_iters: 20_000, ..DrConfig::default() };
        let outcome = douglas_rachford(
            |m| prox1.apply(m),
            |m| m.clone(),
            |m| problem.quadratic_value(m).unwrap(),
            &config,
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!(outcome.converged);
        assert!((outcome.solution - a_star).norm() <= 1e-6);
    }

    #[test]
    fn dr_on_a_proximal_toy_problem_matches_soft_threshold() {
        // f1 = 1/2 ||A - B||_F^2, f2 = gamma ||A||_1: the solution is the
        // soft threshold of B at gamma.
        let b = dmatrix![1.5, -0.2; 0.7, -2.0];
        let gamma = 0.6;
        let theta = 1.0;
        // prox of theta/2 ||A - B||^2 at M is (M + theta B) / (1 + theta).
        let prox1 = |m: &DMatrix<f64>| (m + &b * theta) / (1.0 + theta);
        let prox2 = |m: &DMatrix<f64>| soft_threshold(m, theta * gamma);
        let objective = |m: &DMatrix<f64>| {
            0.5 * (m - &b).norm_squared() + gamma * crate::linalg::l1_norm(m)
        };
        let config = DrConfig { tolerance: 1e-13, max_iters: 50_000, ..DrConfig::default() };
        let outcome =
            douglas_rachford(prox1, prox2, objective, &config, DMatrix::zeros(2, 2)).unwrap();
        assert!(outcome.converged);
        let expected = soft_threshold(&b, gamma);
        assert!((outcome.solution - expected).norm() <= 1e-6);
    }

    #[test]
    fn dr_reports_hitting_the_iteration_cap() {
        let config = DrConfig { tolerance: 1e-300, max_iters: 3, ..DrConfig::default() };
        let b = dmatrix![1.0];
        let outcome = douglas_rachford(
            |m: &DMatrix<f64>| (m + &b) / 2.0,
            |m: &DMatrix<f64>| m.clone(),
            |m: &DMatrix<f64>| (m - &b).norm_squared(),
            &config,
            dmatrix![10.0],
        )
        .unwrap();
        assert!(!outcome.converged);
        assert_eq!(outcome.iters, 3);
    }

    #[test]
    fn dr_config_bounds_are_enforced() {
        assert!(DrConfig { theta: 0.0, ..DrConfig::default() }.validate().is_err());
        assert!(DrConfig { theta: 2.0, ..DrConfig::default() }.validate().is_err());
        assert!(DrConfig { tolerance: 0.0, ..DrConfig::default() }.validate().is_err());
        assert!(DrConfig::default().validate().is_ok());
    }
}
