//! Linear-Gaussian state-space model, trajectory simulation, and the
//! block-diagonal AR(1) synthetic datasets used in the benchmark protocol.
//!
//! The model is
//!
//! ```text
//! x_k = A x_{k-1} + q_k,   q_k ~ N(0, Q)
//! y_k = H x_k   + r_k,   r_k ~ N(0, R)
//! x_0 ~ N(x0_mean, P0)
//! ```
//!
//! for `k = 1..=K`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result, ValidationReport};
use crate::linalg::{is_symmetric_within, symmetrize};

/// Spectral-norm bound applied to generated transition matrices. Strictly
/// below 1 so the simulated state process cannot be marginally stable.
pub const DEFAULT_SPECTRAL_BOUND: f64 = 0.99;

/// Full parameterization of a time-invariant linear-Gaussian state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct LgssmModel {
    /// State transition matrix `A` (n_x x n_x).
    pub a: DMatrix<f64>,
    /// Observation operator `H` (n_y x n_x).
    pub h: DMatrix<f64>,
    /// State-noise covariance `Q` (n_x x n_x, SPD).
    pub q: DMatrix<f64>,
    /// Observation-noise covariance `R` (n_y x n_y, SPD).
    pub r: DMatrix<f64>,
    /// Initial state mean.
    pub x0_mean: DVector<f64>,
    /// Initial state covariance `P0` (n_x x n_x, SPD).
    pub p0: DMatrix<f64>,
}

impl LgssmModel {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.h.nrows()
    }

    /// Checks every structural invariant and reports all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::ok();
        let n_x = self.a.nrows();
        let n_y = self.h.nrows();

        if self.a.ncols() != n_x {
            report.push(format!(
                "A must be square, got {}x{}",
                self.a.nrows(),
                self.a.ncols()
            ));
        }
        if self.h.ncols() != n_x {
            report.push(format!(
                "dimension mismatch: H is {}x{} but A is {}x{}",
                n_y,
                self.h.ncols(),
                n_x,
                self.a.ncols()
            ));
        }
        if self.q.nrows() != n_x || self.q.ncols() != n_x {
            report.push(format!(
                "dimension mismatch: Q is {}x{}, expected {n_x}x{n_x}",
                self.q.nrows(),
                self.q.ncols()
            ));
        }
        if self.r.nrows() != n_y || self.r.ncols() != n_y {
            report.push(format!(
                "dimension mismatch: R is {}x{}, expected {n_y}x{n_y}",
                self.r.nrows(),
                self.r.ncols()
            ));
        }
        if self.x0_mean.len() != n_x {
            report.push(format!(
                "dimension mismatch: x0_mean has length {}, expected {n_x}",
                self.x0_mean.len()
            ));
        }
        if self.p0.nrows() != n_x || self.p0.ncols() != n_x {
            report.push(format!(
                "dimension mismatch: P0 is {}x{}, expected {n_x}x{n_x}",
                self.p0.nrows(),
                self.p0.ncols()
            ));
        }

        check_spd(&self.q, "Q", &mut report);
        check_spd(&self.r, "R", &mut report);
        check_spd(&self.p0, "P0", &mut report);

        report
    }
}

fn check_spd(m: &DMatrix<f64>, name: &str, report: &mut ValidationReport) {
    if !m.is_square() {
        // Already reported as a dimension problem.
        return;
    }
    if !is_symmetric_within(m, 1e-12) {
        report.push(format!("{name} not symmetric"));
        return;
    }
    let eigs = symmetrize(m).symmetric_eigenvalues();
    if eigs.min() <= 0.0 {
        report.push(format!("{name} not positive definite"));
    }
}

/// A simulated state/observation sequence: states `x_0..x_K` and
/// observations `y_1..y_K`, so there is always one more state than
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Number of observations `K`.
    pub fn seq_length(&self) -> usize {
        self.observations.len()
    }
}

/// Parameters of one synthetic benchmark dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// Diagonal block dimensions of the true transition matrix.
    pub block_sizes: Vec<usize>,
    /// State-noise scale: `Q = sigma_q^2 I`.
    pub sigma_q: f64,
    /// Observation-noise scale: `R = sigma_r^2 I`.
    pub sigma_r: f64,
    /// Initial-covariance scale: `P0 = sigma_p^2 I`.
    pub sigma_p: f64,
    /// Number of observations `K`.
    pub seq_length: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Total state dimension (`n_x = n_y = sum of block sizes`).
    pub fn dim(&self) -> usize {
        self.block_sizes.iter().sum()
    }
}

/// The four named benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    A,
    B,
    C,
    D,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::A, Preset::B, Preset::C, Preset::D];

    pub fn name(self) -> &'static str {
        match self {
            Preset::A => "A",
            Preset::B => "B",
            Preset::C => "C",
            Preset::D => "D",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Preset::A),
            "B" => Ok(Preset::B),
            "C" => Ok(Preset::C),
            "D" => Ok(Preset::D),
            other => Err(Error::Config(format!(
                "unknown dataset preset {other:?}, expected one of A, B, C, D"
            ))),
        }
    }

    /// The dataset parameters bound to this preset name.
    pub fn spec(self, seed: u64) -> DatasetSpec {
        let (block_sizes, sigma_q, sigma_r) = match self {
            Preset::A => (vec![3, 3, 3], 1e-1, 1e-1),
            Preset::B => (vec![3, 3, 3], 1.0, 1.0),
            Preset::C => (vec![3, 5, 5, 3], 1e-1, 1e-1),
            Preset::D => (vec![3, 5, 5, 3], 1.0, 1.0),
        };
        DatasetSpec {
            block_sizes,
            sigma_q,
            sigma_r,
            sigma_p: 1e-4,
            seq_length: 1000,
            seed,
        }
    }
}

/// A generated dataset: the ground-truth transition matrix, the model it was
/// simulated from, and the simulated trajectory.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub a_true: DMatrix<f64>,
    pub model: LgssmModel,
    pub trajectory: Trajectory,
}

fn sample_standard_normal(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Simulates a trajectory of `seq_length` observations from a validated model.
///
/// The draw order is fixed (x_0, then q_k and r_k per step), so the output is
/// a pure function of `(model, seq_length, seed)`.
pub fn simulate(model: &LgssmModel, seq_length: usize, seed: u64) -> Result<Trajectory> {
    model.validate().into_result()?;
    if seq_length == 0 {
        return Err(Error::Degenerate("seq_length must be at least 1".into()));
    }

    let chol_p0 = nalgebra::Cholesky::new(model.p0.clone()).ok_or_else(|| Error::Singular {
        context: "P0 Cholesky factor".into(),
    })?;
    let chol_q = nalgebra::Cholesky::new(model.q.clone()).ok_or_else(|| Error::Singular {
        context: "Q Cholesky factor".into(),
    })?;
    let chol_r = nalgebra::Cholesky::new(model.r.clone()).ok_or_else(|| Error::Singular {
        context: "R Cholesky factor".into(),
    })?;

    let n_x = model.n_x();
    let n_y = model.n_y();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut states = Vec::with_capacity(seq_length + 1);
    let mut observations = Vec::with_capacity(seq_length);

    let x0 = &model.x0_mean + chol_p0.l() * sample_standard_normal(&mut rng, n_x);
    states.push(x0);

    for _ in 0..seq_length {
        let q_k = chol_q.l() * sample_standard_normal(&mut rng, n_x);
        let x_k = &model.a * states.last().expect("nonempty") + q_k;
        let r_k = chol_r.l() * sample_standard_normal(&mut rng, n_y);
        let y_k = &model.h * &x_k + r_k;
        states.push(x_k);
        observations.push(y_k);
    }

    Ok(Trajectory { states, observations })
}

/// Clips the singular values of `M` to `bound`, giving the Frobenius-nearest
/// matrix with spectral norm at most `bound`. Returns `M` unchanged when it
/// is already inside the ball.
pub fn project_spectral_norm(m: &DMatrix<f64>, bound: f64) -> DMatrix<f64> {
    assert!(bound > 0.0, "spectral bound must be positive");
    // The relative slack absorbs clipping dust so re-projecting an
    // already-projected matrix is an exact no-op.
    if m.singular_values().max() <= bound * (1.0 + 1e-12) {
        return m.clone();
    }
    // Clip through the right singular basis: P = M V f(S) V^T with
    // f = min(1, bound/s) and (V, S^2) the eigendecomposition of M^T M.
    // This never pairs separately computed U and V factors, which is
    // unreliable when singular values cluster (as they do after clipping).
    let gram = symmetrize(&(m.transpose() * m));
    let eig = gram.symmetric_eigen();
    let scale = eig.eigenvalues.map(|l| {
        let s = l.max(0.0).sqrt();
        if s <= bound {
            1.0
        } else {
            bound / s
        }
    });
    m * &eig.eigenvectors * DMatrix::from_diagonal(&scale) * eig.eigenvectors.transpose()
}

/// Draws a block-diagonal transition matrix: each diagonal block is the
/// AR(1) autocorrelation matrix `rho^|i-j|` with its own coefficient
/// `rho ~ U(0.3, 0.9)`, and the whole matrix is projected to spectral norm at
/// most `bound`. Entries outside the blocks are exactly zero; entries inside
/// are nonzero (so block structure and edge pattern coincide), with the
/// far-off-diagonal powers of `rho` naturally small.
pub fn random_block_ar1_matrix(
    block_sizes: &[usize],
    seed: u64,
    bound: f64,
) -> Result<DMatrix<f64>> {
    if block_sizes.is_empty() {
        return Err(Error::Degenerate("block size list is empty".into()));
    }
    if block_sizes.iter().any(|&b| b == 0) {
        return Err(Error::Degenerate("block sizes must be positive".into()));
    }

    let n: usize = block_sizes.iter().sum();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = DMatrix::zeros(n, n);
    let mut offset = 0;
    for &b in block_sizes {
        let rho: f64 = rng.random_range(0.3..0.9);
        for i in 0..b {
            for j in 0..b {
                a[(offset + i, offset + j)] = rho.powi((i as i32 - j as i32).abs());
            }
        }
        offset += b;
    }

    let mut projected = project_spectral_norm(&a, bound);
    // Clipping singular values of a block-diagonal matrix is block-diagonal in
    // exact arithmetic; scrub the off-block floating-point dust so the
    // structural zero pattern is exact.
    apply_block_mask(&mut projected, block_sizes);
    Ok(projected)
}

fn apply_block_mask(m: &mut DMatrix<f64>, block_sizes: &[usize]) {
    let n = m.nrows();
    let mut in_block = vec![usize::MAX; n];
    let mut offset = 0;
    for (idx, &b) in block_sizes.iter().enumerate() {
        for i in 0..b {
            in_block[offset + i] = idx;
        }
        offset += b;
    }
    for i in 0..n {
        for j in 0..n {
            if in_block[i] != in_block[j] {
                m[(i, j)] = 0.0;
            }
        }
    }
}

/// Generates a full synthetic dataset from a [`DatasetSpec`]: the true
/// block-diagonal `A`, the model with `H = I`, `Q = sigma_q^2 I`,
/// `R = sigma_r^2 I`, `P0 = sigma_p^2 I`, `x0_mean = 0`, and a simulated
/// trajectory of `seq_length` observations.
pub fn make_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    let n = spec.dim();
    if n == 0 {
        return Err(Error::Degenerate("dataset has zero state dimension".into()));
    }
    for (name, value) in [
        ("sigma_q", spec.sigma_q),
        ("sigma_r", spec.sigma_r),
        ("sigma_p", spec.sigma_p),
    ] {
        if !(value > 0.0) {
            return Err(Error::Config(format!("{name} must be positive, got {value}")));
        }
    }

    // One stream seeds both the matrix draw and the trajectory so a single
    // dataset seed pins the whole realization.
    let mut seeder = ChaCha20Rng::seed_from_u64(spec.seed);
    let a_seed = seeder.next_u64();
    let traj_seed = seeder.next_u64();

    let a_true = random_block_ar1_matrix(&spec.block_sizes, a_seed, DEFAULT_SPECTRAL_BOUND)?;
    let model = LgssmModel {
        a: a_true.clone(),
        h: DMatrix::identity(n, n),
        q: DMatrix::identity(n, n) * spec.sigma_q.powi(2),
        r: DMatrix::identity(n, n) * spec.sigma_r.powi(2),
        x0_mean: DVector::zeros(n),
        p0: DMatrix::identity(n, n) * spec.sigma_p.powi(2),
    };
    let trajectory = simulate(&model, spec.seq_length, traj_seed)?;
    Ok(SyntheticDataset { a_true, model, trajectory })
}
