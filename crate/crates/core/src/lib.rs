//! Cooperative network localization from ranges, bearings and velocities.
//!
//! A mobile network of vehicles measures noisy inter-vehicle distances, noisy
//! bearing unit vectors and each vehicle's own velocity. A few vehicles
//! (anchors) know their positions; the rest estimate theirs. The estimator
//! relaxes the maximum-likelihood problem into a convex program over a sliding
//! time window and solves it with an accelerated projected-gradient iteration
//! that decomposes into per-node updates exchanging data only with one-hop
//! neighbors.
//!
//! Crate layout:
//!
//! - [`graph`] — time-indexed network model and incidence structures
//! - [`measurement`] — noise models, synthetic datasets, outlier injection
//! - [`problem`] — convex cost, constraint set and the quadratic operator
//! - [`solver`] — centralized FISTA reference solver
//! - [`distributed`] — per-node solver over simulated synchronous rounds
//! - [`estimation`] — online noise-parameter estimation (parameter-free mode)
//! - [`scenario`] — trajectory generators (lawnmower, lap, helix)
//! - [`ekf`] — extended Kalman filter baseline
//! - [`metrics`], [`config`], [`experiment`] — Monte Carlo harness
//! - [`synthetic`], [`verify`] — random instances and oracle check suites

pub mod config;
pub mod distributed;
pub mod ekf;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod graph;
pub mod measurement;
pub mod metrics;
pub mod problem;
pub mod runner;
pub mod scenario;
pub mod solver;
pub mod synthetic;
pub mod verify;
pub(crate) mod vecn;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
