//! End-to-end behavior of the EM fitters on small synthetic problems:
//! equivalence of the two M-step routes at gamma = 0, Monte-Carlo checks of
//! the simulated moments, and the sparsity path in gamma.

use nalgebra::{DMatrix, DVector};

use graphem::em::{
    default_gamma_grid, gamma_max, graphem_fit, mlem_fit, GraphemConfig, KnownParams, MlemConfig,
};
use graphem::estep::compute_estep_stats;
use graphem::kalman::{kalman_filter, rts_smoother};
use graphem::metrics::{count_edges, DEFAULT_EDGE_THRESHOLD};
use graphem::model::{make_dataset, simulate, DatasetSpec, LgssmModel, SyntheticDataset};
use graphem::prox::DrConfig;

fn small_dataset(seed: u64) -> SyntheticDataset {
    make_dataset(&DatasetSpec {
        block_sizes: vec![2, 2],
        sigma_q: 0.3,
        sigma_r: 0.3,
        sigma_p: 1e-4,
        seq_length: 150,
        seed,
    })
    .unwrap()
}

#[test]
fn gamma_zero_graphem_tracks_mlem_iteration_by_iteration() {
    let ds = small_dataset(21);
    let known = KnownParams::from_model(&ds.model);
    let obs = &ds.trajectory.observations;

    // Effectively disable the EM stop so the iteration counts line up, and
    // run the inner solver tight so it reproduces the closed form.
    let iters = 8;
    let graphem_config = GraphemConfig {
        em_tolerance: 1e-300,
        em_max_iters: iters,
        dr: DrConfig { theta: 1.0, tolerance: 1e-11, max_iters: 200_000 },
        ..GraphemConfig::new(0.0)
    };
    let mlem_config = MlemConfig { em_tolerance: 1e-300, em_max_iters: iters, ..Default::default() };

    let (_, graphem_trace) = graphem_fit(obs, &known, &graphem_config).unwrap();
    let (_, mlem_trace) = mlem_fit(obs, &known, &mlem_config).unwrap();

    assert_eq!(graphem_trace.len(), iters + 1);
    assert_eq!(mlem_trace.len(), iters + 1);
    for i in 0..=iters {
        let diff = (&graphem_trace.iterates[i] - &mlem_trace.iterates[i]).norm();
        assert!(diff <= 1e-5, "iteration {i}: routes differ by {diff}");
    }
}

#[test]
fn one_em_iteration_at_gamma_zero_equals_the_closed_form_mstep() {
    let ds = small_dataset(22);
    let known = KnownParams::from_model(&ds.model);
    let obs = &ds.trajectory.observations;

    // Reproduce the E-step by hand from the default initializer.
    let a0 = graphem::em::default_initializer(known.n_x());
    let model = known.with_transition(a0.clone());
    let pass = kalman_filter(&model, obs).unwrap();
    let smoothed = rts_smoother(&model, &pass).unwrap();
    let stats = compute_estep_stats(&smoothed, obs.len()).unwrap();
    let closed_form = graphem::em::mlem_mstep(&stats).unwrap();

    let config = GraphemConfig {
        em_max_iters: 1,
        dr: DrConfig { theta: 1.0, tolerance: 1e-11, max_iters: 200_000 },
        ..GraphemConfig::new(0.0)
    };
    let (a1, _) = graphem_fit(obs, &known, &config).unwrap();
    assert!((a1 - closed_form).norm() <= 1e-6);
}

#[test]
fn simulated_state_noise_has_the_model_covariance() {
    // Law of large numbers on q_k = x_k - A x_{k-1} over a long run.
    let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.1, 0.4, 0.1, 0.0, 0.3, 0.6]);
    let q_diag = [0.8, 0.5, 1.3];
    let model = LgssmModel {
        a: a.clone(),
        h: DMatrix::identity(3, 3),
        q: DMatrix::from_diagonal(&DVector::from_row_slice(&q_diag)),
        r: DMatrix::identity(3, 3),
        x0_mean: DVector::zeros(3),
        p0: DMatrix::identity(3, 3),
    };
    let k = 100_000;
    let traj = simulate(&model, k, 123).unwrap();

    let mut mean = DVector::zeros(3);
    let mut second = DMatrix::zeros(3, 3);
    for step in 1..=k {
        let q_hat = &traj.states[step] - &a * &traj.states[step - 1];
        mean += &q_hat;
        second += &q_hat * q_hat.transpose();
    }
    mean /= k as f64;
    let cov = second / k as f64 - &mean * mean.transpose();

    for i in 0..3 {
        let rel = (cov[(i, i)] - q_diag[i]).abs() / q_diag[i];
        assert!(rel <= 0.05, "diagonal {i}: sample {} vs model {}", cov[(i, i)], q_diag[i]);
    }
}

#[test]
fn smoothed_cross_moment_tracks_the_sample_moment() {
    // E[x_k x_{k-1}^T] estimated from the true states must agree with the
    // smoother-based statistic C up to sampling error.
    let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.3, 0.5]);
    let model = LgssmModel {
        a: a.clone(),
        h: DMatrix::identity(2, 2),
        q: DMatrix::identity(2, 2) * 0.4,
        r: DMatrix::identity(2, 2) * 0.2,
        x0_mean: DVector::zeros(2),
        p0: DMatrix::identity(2, 2) * 0.4,
    };
    let k = 100_000;
    let traj = simulate(&model, k, 321).unwrap();

    let mut sample = DMatrix::zeros(2, 2);
    for step in 1..=k {
        sample += &traj.states[step] * traj.states[step - 1].transpose();
    }
    sample /= k as f64;

    let pass = kalman_filter(&model, &traj.observations).unwrap();
    let smoothed = rts_smoother(&model, &pass).unwrap();
    let stats = compute_estep_stats(&smoothed, k).unwrap();

    let rel = (&stats.c - &sample).norm() / sample.norm();
    assert!(rel <= 0.05, "C differs from the sample moment by {rel}");
}

#[test]
fn sparsity_is_monotone_along_the_default_gamma_grid() {
    let ds = small_dataset(23);
    let known = KnownParams::from_model(&ds.model);
    let obs = &ds.trajectory.observations;

    // gamma_max from the first E-step at the default initializer.
    let a0 = graphem::em::default_initializer(known.n_x());
    let model = known.with_transition(a0);
    let pass = kalman_filter(&model, obs).unwrap();
    let smoothed = rts_smoother(&model, &pass).unwrap();
    let stats = compute_estep_stats(&smoothed, obs.len()).unwrap();
    let g_max = gamma_max(&stats, &known.q).unwrap();

    let grid = default_gamma_grid(g_max);
    let mut counts = Vec::new();
    for &gamma in &grid {
        let (a_hat, trace) = graphem_fit(obs, &known, &GraphemConfig::new(gamma)).unwrap();
        assert!(trace.max_objective_increase() <= 1e-8, "gamma {gamma} broke monotonicity");
        counts.push(count_edges(&a_hat, DEFAULT_EDGE_THRESHOLD));
    }
    for w in counts.windows(2) {
        assert!(w[1] <= w[0], "edge counts {counts:?} not nonincreasing over {grid:?}");
    }
    assert_eq!(*counts.last().unwrap(), 0, "largest grid gamma did not empty the estimate");
}

#[test]
fn mlem_estimate_is_dense_on_generated_data() {
    let ds = small_dataset(24);
    let known = KnownParams::from_model(&ds.model);
    let (a_hat, trace) =
        mlem_fit(&ds.trajectory.observations, &known, &MlemConfig::default()).unwrap();
    assert!(trace.max_objective_increase() <= 1e-8);
    let n = known.n_x();
    assert_eq!(count_edges(&a_hat, DEFAULT_EDGE_THRESHOLD), n * n, "MLEM produced exact zeros");
}
