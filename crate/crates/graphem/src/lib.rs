//! Sparse transition-matrix estimation for linear-Gaussian state-space
//! models.
//!
//! The state sequence follows `x_k = A x_{k-1} + q_k` and is observed through
//! `y_k = H x_k + r_k`, with all noise Gaussian. Everything except `A` is
//! treated as known; `A` doubles as the weighted adjacency matrix of a
//! directed graph between state dimensions, so estimating it sparsely reveals
//! which dimensions drive which.
//!
//! The crate provides:
//!
//! - exact Kalman filtering and RTS smoothing ([`kalman`]),
//! - the EM sufficient statistics and quadratic majorizer ([`estep`]),
//! - proximity operators and a Douglas-Rachford inner solver ([`prox`]),
//! - the sparse MAP fitter and a maximum-likelihood baseline ([`em`]),
//! - synthetic block-diagonal AR(1) benchmark datasets ([`model`]),
//! - evaluation metrics ([`metrics`]) and CSV serialization ([`io`]).
//!
//! ```
//! use graphem::em::{graphem_fit, GraphemConfig, KnownParams};
//! use graphem::model::{make_dataset, Preset};
//!
//! let dataset = make_dataset(&Preset::A.spec(0)).unwrap();
//! let known = KnownParams::from_model(&dataset.model);
//! let config = GraphemConfig { em_max_iters: 3, ..GraphemConfig::new(20.0) };
//! let (a_hat, trace) = graphem_fit(&dataset.trajectory.observations, &known, &config).unwrap();
//! assert_eq!(a_hat.nrows(), 9);
//! assert!(trace.max_objective_increase() <= 1e-8);
//! ```

pub mod em;
pub mod error;
pub mod estep;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod prox;

pub use error::{Error, Result, ValidationReport};
pub use model::{LgssmModel, Trajectory};
