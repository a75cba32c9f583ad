//! Outer EM drivers: the sparse MAP fitter (l1-penalized M-step solved by
//! Douglas-Rachford) and the maximum-likelihood baseline with its closed-form
//! M-step.
//!
//! Both drivers alternate an E-step (Kalman filter + RTS smoother at the
//! current transition matrix, accumulated into [`EStepStats`]) with an M-step
//! that minimizes the resulting quadratic majorizer, and stop when the MAP
//! objective changes by less than `em_tolerance` between iterates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estep::{compute_estep_stats, majorizer_value, EStepStats};
use crate::kalman::{kalman_filter, rts_smoother, FilterPass};
use crate::linalg::{l1_norm, max_abs, SpdFactor};
use crate::model::LgssmModel;
use crate::prox::{douglas_rachford, soft_threshold, DrConfig, QuadraticProx, QuadraticProxProblem};

/// Model parameters that are held fixed while the transition matrix is
/// estimated.
#[derive(Debug, Clone)]
pub struct KnownParams {
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x0_mean: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl KnownParams {
    pub fn from_model(model: &LgssmModel) -> Self {
        Self {
            h: model.h.clone(),
            q: model.q.clone(),
            r: model.r.clone(),
            x0_mean: model.x0_mean.clone(),
            p0: model.p0.clone(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.q.nrows()
    }

    /// Completes the model with a candidate transition matrix.
    pub fn with_transition(&self, a: DMatrix<f64>) -> LgssmModel {
        LgssmModel {
            a,
            h: self.h.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            x0_mean: self.x0_mean.clone(),
            p0: self.p0.clone(),
        }
    }
}

/// Choice of starting transition matrix.
#[derive(Debug, Clone)]
pub enum Initializer {
    /// Diagonal AR(1)-style start, `alpha * I`.
    Ar1 { alpha: f64 },
    /// Explicit starting matrix.
    Matrix(DMatrix<f64>),
}

impl Default for Initializer {
    fn default() -> Self {
        Initializer::Ar1 { alpha: 0.1 }
    }
}

impl Initializer {
    pub fn build(&self, n_x: usize) -> Result<DMatrix<f64>> {
        match self {
            Initializer::Ar1 { alpha } => Ok(DMatrix::identity(n_x, n_x) * *alpha),
            Initializer::Matrix(m) => {
                if m.nrows() != n_x || m.ncols() != n_x {
                    return Err(Error::Dimension(format!(
                        "initial matrix is {}x{}, expected {n_x}x{n_x}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Ok(m.clone())
            }
        }
    }
}

/// The default AR(1)-style initializer, `0.1 * I`.
pub fn default_initializer(n_x: usize) -> DMatrix<f64> {
    Initializer::default().build(n_x).expect("scaled identity always builds")
}

/// Configuration of the sparse MAP fitter.
#[derive(Debug, Clone)]
pub struct GraphemConfig {
    /// L1 prior weight `gamma >= 0`.
    pub gamma: f64,
    /// Stop when `|phi_K(A_i) - phi_K(A_{i-1})| <= em_tolerance`.
    pub em_tolerance: f64,
    pub em_max_iters: usize,
    pub dr: DrConfig,
    pub init: Initializer,
}

impl GraphemConfig {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            em_tolerance: 1e-3,
            em_max_iters: 50,
            dr: DrConfig::default(),
            init: Initializer::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if !(self.em_tolerance > 0.0) {
            return Err(Error::Config("EM tolerance must be positive".into()));
        }
        if self.em_max_iters == 0 {
            return Err(Error::Config("EM iteration cap must be positive".into()));
        }
        self.dr.validate()
    }
}

/// Configuration of the maximum-likelihood baseline (no prior, closed-form
/// M-step).
#[derive(Debug, Clone)]
pub struct MlemConfig {
    pub em_tolerance: f64,
    pub em_max_iters: usize,
    pub init: Initializer,
}

impl Default for MlemConfig {
    fn default() -> Self {
        Self { em_tolerance: 1e-3, em_max_iters: 50, init: Initializer::default() }
    }
}

/// Per-iteration record of an EM run. Slot 0 holds the initializer and its
/// objective; slot `i` holds the accepted iterate of EM iteration `i`.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub iterates: Vec<DMatrix<f64>>,
    /// MAP objective `phi_K` at each iterate.
    pub objectives: Vec<f64>,
    /// Inner-solver iterations spent producing each iterate (0 for slot 0).
    pub inner_iters: Vec<usize>,
    /// Seconds elapsed when each iterate was accepted.
    pub elapsed: Vec<f64>,
    pub converged: bool,
    pub wall_time: f64,
}

impl FitTrace {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    /// Largest increase between consecutive objectives (negative when the
    /// trace strictly decreases). Monotone fits keep this below 1e-8.
    pub fn max_objective_increase(&self) -> f64 {
        self.objectives
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The smallest prior weight that zeroes the first M-step:
/// `gamma_max = K max|Q^{-1} C|`. For `gamma >= gamma_max` the subgradient
/// condition holds at `A = 0`.
pub fn gamma_max(stats: &EStepStats, q_noise: &DMatrix<f64>) -> Result<f64> {
    let q_factor = SpdFactor::new(q_noise, "state-noise covariance Q")?;
    let qinv_c = q_factor.solve(&stats.c);
    Ok(stats.seq_length as f64 * max_abs(&qinv_c))
}

/// Log-spaced prior-weight grid anchored at `gamma_max`: eight fractions
/// spanning three decades below it plus one point safely above, so a search
/// always brackets both the dense and the fully-sparse regime.
pub fn default_gamma_grid(gamma_max: f64) -> Vec<f64> {
    [1e-3, 3e-3, 1e-2, 2e-2, 3e-2, 5e-2, 1e-1, 3e-1, 2.0]
        .iter()
        .map(|f| f * gamma_max)
        .collect()
}

/// Closed-form M-step of the maximum-likelihood fitter: `A = C Phi^{-1}`.
pub fn mlem_mstep(stats: &EStepStats) -> Result<DMatrix<f64>> {
    let phi = stats.phi_for_inversion();
    let factor = SpdFactor::new(&phi, "Phi")?;
    // A Phi = C, solved through the transpose (Phi symmetric).
    Ok(factor.solve(&stats.c.transpose()).transpose())
}

/// Fits the transition matrix by MAP EM: E-step filter/smoother, M-step
/// Douglas-Rachford on the l1-penalized majorizer, initialized at the
/// current iterate with relaxation `theta` from `config.dr`.
pub fn graphem_fit(
    observations: &[DVector<f64>],
    known: &KnownParams,
    config: &GraphemConfig,
) -> Result<(DMatrix<f64>, FitTrace)> {
    config.validate()?;
    let gamma = config.gamma;
    let dr = config.dr.clone();

    em_driver(
        observations,
        known,
        gamma,
        config.em_tolerance,
        config.em_max_iters,
        &config.init,
        |stats, a_prev, progress_hint| {
            let problem = QuadraticProxProblem::new(stats.clone(), known.q.clone())?;
            let theta = dr.theta;
            let inner_tol = dr.tolerance.min(progress_hint).max(1e-12);
            let run = |tolerance: f64, max_iters: usize| -> Result<(DMatrix<f64>, usize)> {
                let prox1 = QuadraticProx::new(&problem, theta)?;
                let config = DrConfig { theta, tolerance, max_iters };
                let outcome = douglas_rachford(
                    |m| prox1.apply(m),
                    |m| soft_threshold(m, theta * gamma),
                    |m| {
                        problem.quadratic_value(m).expect("dimensions fixed by the problem")
                            + gamma * l1_norm(m)
                    },
                    &config,
                    a_prev.clone(),
                )?;
                Ok((outcome.solution, outcome.iters))
            };

            let (candidate, iters) = run(inner_tol, dr.max_iters)?;

            // EM monotonicity needs the M-step to do no worse than the
            // tangent point; if the truncated inner solve missed that, retry
            // tighter, and fall back to a no-op step as a last resort.
            let value = |a: &DMatrix<f64>| majorizer_value(a, stats, &known.q, gamma);
            if value(&candidate)? <= value(a_prev)? {
                return Ok((candidate, iters));
            }
            let (retry, retry_iters) = run(inner_tol * 1e-3, dr.max_iters * 4)?;
            if value(&retry)? <= value(a_prev)? {
                return Ok((retry, iters + retry_iters));
            }
            Ok((a_prev.clone(), iters + retry_iters))
        },
    )
}

/// Fits the transition matrix by maximum-likelihood EM with the closed-form
/// M-step `A = C Phi^{-1}`.
pub fn mlem_fit(
    observations: &[DVector<f64>],
    known: &KnownParams,
    config: &MlemConfig,
) -> Result<(DMatrix<f64>, FitTrace)> {
    if !(config.em_tolerance > 0.0) {
        return Err(Error::Config("EM tolerance must be positive".into()));
    }
    if config.em_max_iters == 0 {
        return Err(Error::Config("EM iteration cap must be positive".into()));
    }
    em_driver(
        observations,
        known,
        0.0,
        config.em_tolerance,
        config.em_max_iters,
        &config.init,
        |stats, _a_prev, _inner_tol| Ok((mlem_mstep(stats)?, 1)),
    )
}

fn filter_at(
    known: &KnownParams,
    a: &DMatrix<f64>,
    observations: &[DVector<f64>],
    iteration: usize,
) -> Result<FilterPass> {
    kalman_filter(&known.with_transition(a.clone()), observations).map_err(|e| Error::EStep {
        iteration,
        source: Box::new(e),
    })
}

fn em_driver(
    observations: &[DVector<f64>],
    known: &KnownParams,
    gamma: f64,
    em_tolerance: f64,
    em_max_iters: usize,
    init: &Initializer,
    mut mstep: impl FnMut(&EStepStats, &DMatrix<f64>, f64) -> Result<(DMatrix<f64>, usize)>,
) -> Result<(DMatrix<f64>, FitTrace)> {
    let seq_length = observations.len();
    if seq_length < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 observations to fit, got {seq_length}"
        )));
    }

    let start = Instant::now();
    let n_x = known.n_x();
    let mut a = init.build(n_x)?;
    let mut filter = filter_at(known, &a, observations, 0)?;
    let mut objective = gamma * l1_norm(&a) + filter.neg_log_lik;

    let mut trace = FitTrace {
        iterates: vec![a.clone()],
        objectives: vec![objective],
        inner_iters: vec![0],
        elapsed: vec![start.elapsed().as_secs_f64()],
        converged: false,
        wall_time: 0.0,
    };

    // Inner tolerance tightens with the outer progress so a sloppy M-step
    // cannot stall the EM loop near convergence.
    let mut last_decrease = f64::INFINITY;

    for iteration in 1..=em_max_iters {
        let model = known.with_transition(a.clone());
        let smoother = rts_smoother(&model, &filter).map_err(|e| Error::EStep {
            iteration,
            source: Box::new(e),
        })?;
        let stats = compute_estep_stats(&smoother, seq_length)?;

        let progress_hint = 0.1 * last_decrease.abs();
        let (a_next, inner) = mstep(&stats, &a, progress_hint)?;
        let filter_next = filter_at(known, &a_next, observations, iteration)?;
        let objective_next = gamma * l1_norm(&a_next) + filter_next.neg_log_lik;

        trace.iterates.push(a_next.clone());
        trace.objectives.push(objective_next);
        trace.inner_iters.push(inner);
        trace.elapsed.push(start.elapsed().as_secs_f64());

        let delta = (objective - objective_next).abs();
        a = a_next;
        filter = filter_next;
        last_decrease = objective - objective_next;
        objective = objective_next;

        if delta <= em_tolerance {
            trace.converged = true;
            break;
        }
    }

    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((a, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    use crate::model::{make_dataset, DatasetSpec};

    fn small_dataset(seed: u64) -> crate::model::SyntheticDataset {
        make_dataset(&DatasetSpec {
            block_sizes: vec![2, 2],
            sigma_q: 0.3,
            sigma_r: 0.3,
            sigma_p: 1e-4,
            seq_length: 120,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn default_initializer_is_a_scaled_identity() {
        let a0 = default_initializer(3);
        assert_eq!(a0, DMatrix::identity(3, 3) * 0.1);
        assert!(crate::linalg::spectral_norm(&a0) < 1.0);
    }

    #[test]
    fn initializer_rejects_wrong_shape() {
        let init = Initializer::Matrix(DMatrix::zeros(2, 3));
        assert!(init.build(2).is_err());
    }

    #[test]
    fn scalar_mlem_mstep_divides_the_moments() {
        let stats = EStepStats {
            sigma: dmatrix![1.0],
            phi: dmatrix![1.0],
            c: dmatrix![0.5],
            seq_length: 3,
        };
        let a = mlem_mstep(&stats).unwrap();
        assert_relative_eq!(a[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mlem_mstep_zeroes_the_majorizer_gradient() {
        let stats = EStepStats {
            sigma: dmatrix![2.0, 0.1; 0.1, 1.4],
            phi: dmatrix![1.5, 0.3; 0.3, 1.1],
            c: dmatrix![0.7, -0.2; 0.4, 0.6],
            seq_length: 10,
        };
        let a = mlem_mstep(&stats).unwrap();
        // Gradient K Q^{-1}(A Phi - C) vanishes iff A Phi = C.
        assert_relative_eq!((&a * &stats.phi - &stats.c).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn both_fitters_are_deterministic() {
        let ds = small_dataset(0);
        let known = KnownParams::from_model(&ds.model);
        let config = GraphemConfig { em_max_iters: 4, ..GraphemConfig::new(0.5) };
        let (a1, t1) = graphem_fit(&ds.trajectory.observations, &known, &config).unwrap();
        let (a2, t2) = graphem_fit(&ds.trajectory.observations, &known, &config).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(t1.objectives, t2.objectives);

        let mconfig = MlemConfig { em_max_iters: 4, ..MlemConfig::default() };
        let (b1, _) = mlem_fit(&ds.trajectory.observations, &known, &mconfig).unwrap();
        let (b2, _) = mlem_fit(&ds.trajectory.observations, &known, &mconfig).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn objectives_never_increase() {
        let ds = small_dataset(1);
        let known = KnownParams::from_model(&ds.model);
        let (_, trace) =
            graphem_fit(&ds.trajectory.observations, &known, &GraphemConfig::new(2.0)).unwrap();
        assert!(trace.max_objective_increase() <= 1e-8, "trace rose by {}", trace.max_objective_increase());
        let (_, trace) =
            mlem_fit(&ds.trajectory.observations, &known, &MlemConfig::default()).unwrap();
        assert!(trace.max_objective_increase() <= 1e-8);
    }

    #[test]
    fn gamma_at_or_above_gamma_max_zeroes_the_first_mstep() {
        let ds = small_dataset(2);
        let known = KnownParams::from_model(&ds.model);
        let obs = &ds.trajectory.observations;

        // Reproduce the first E-step by hand to compute gamma_max.
        let a0 = default_initializer(known.n_x());
        let model = known.with_transition(a0.clone());
        let filter = kalman_filter(&model, obs).unwrap();
        let smoother = rts_smoother(&model, &filter).unwrap();
        let stats = compute_estep_stats(&smoother, obs.len()).unwrap();
        let g_max = gamma_max(&stats, &known.q).unwrap();

        for gamma in [g_max * (1.0 + 1e-9), 2.0 * g_max] {
            let config = GraphemConfig { em_max_iters: 1, ..GraphemConfig::new(gamma) };
            let (a1, _) = graphem_fit(obs, &known, &config).unwrap();
            assert_eq!(max_abs(&a1), 0.0, "gamma={gamma} left |A|={}", max_abs(&a1));
        }
    }

    #[test]
    fn default_grid_brackets_gamma_max() {
        let grid = default_gamma_grid(100.0);
        assert_eq!(grid.len(), 9);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        assert!(grid[0] < 1.0);
        assert!(*grid.last().unwrap() >= 100.0);
    }

    #[test]
    fn too_short_sequences_are_rejected() {
        let ds = small_dataset(3);
        let known = KnownParams::from_model(&ds.model);
        let one = &ds.trajectory.observations[..1];
        assert!(graphem_fit(one, &known, &GraphemConfig::new(0.0)).is_err());
    }

    #[test]
    fn estep_failure_reports_the_iteration() {
        let ds = small_dataset(4);
        let mut known = KnownParams::from_model(&ds.model);
        known.r = DMatrix::zeros(known.r.nrows(), known.r.ncols());
        known.h = DMatrix::zeros(known.h.nrows(), known.h.ncols());
        match graphem_fit(&ds.trajectory.observations, &known, &GraphemConfig::new(0.0)) {
            Err(Error::EStep { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected EStep failure, got {other:?}"),
        }
    }
}
