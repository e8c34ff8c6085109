//! Bayesian identification of the state matrix from finite-difference data.

mod belief;
mod observations;
mod stencil;

pub use belief::{make_prior, BeliefSnapshot, MatrixBelief, PriorOverrides, RegressionBatch};
pub use observations::extract_observations;
pub use stencil::{build_stencils, StencilTable};
