//! Finite-horizon LQR with an unknown state matrix, solved on a single
//! trajectory: a Gaussian belief over the matrix is refined by Bayesian linear
//! regression on finite-difference derivatives while round-wise Riccati
//! feedback, planned with the current mean, drives the plant.

pub mod config;
pub mod controller;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod linalg;
pub mod plant;
pub mod problem;
pub mod regression;
pub mod riccati;
pub mod selftest;

pub use config::{OutputFormat, RunConfig};
pub use controller::{run_online, run_online_with_belief, run_reference, OnlineRun, ReferenceRun, RoundRecord};
pub use error::{LqrError, Result};
pub use harness::{a_error, convergence_order, run_pair, run_sweep, RunReport, SweepOptions, SweepResult, SweepRow};
pub use problem::{cost_of, KnownProblem, ProblemSpec, TimeGrid, Trajectory, ValidatedSpec};
