//! The two benchmark instances: a 2-state oscillator and a random 4-state, 3-input system.

use nalgebra::{dmatrix, dvector, DMatrix};

use crate::problem::ProblemSpec;

/// Harmonic oscillator with a single force input, T = 5, x0 = (0, 1).
pub fn test1(dt: f64, order: usize) -> ProblemSpec {
    ProblemSpec::with_defaults(
        dmatrix![0.0, 1.0; -1.0, 0.0],
        dmatrix![0.0; 1.0],
        DMatrix::identity(2, 2),
        dmatrix![0.1],
        DMatrix::zeros(2, 2),
        5.0,
        dvector![0.0, 1.0],
        dt,
        order,
    )
}

/// n = 4, m = 3, T = 10, Δt = 0.025, p = 2, S = 4.
pub fn test2() -> ProblemSpec {
    let a = dmatrix![
        -0.0215, -0.7776, -0.1922, 0.9123;
        -0.3246, 0.5605, -0.8071, 0.1504;
        0.8001, -0.2205, -0.7360, -0.8804;
        -0.2615, -0.5166, 0.8841, -0.5304
    ];
    let b = dmatrix![
        -0.2937, -0.6620, -0.0982;
        0.6424, 0.2982, 0.0940;
        -0.9692, 0.4634, -0.4074;
        -0.9140, 0.2955, 0.4894
    ];
    ProblemSpec::with_defaults(
        a,
        b,
        DMatrix::identity(4, 4) * 0.25,
        DMatrix::identity(3, 3) / 3.0,
        DMatrix::identity(4, 4),
        10.0,
        dvector![1.0, 1.0, 1.0, 1.0],
        0.025,
        2,
    )
}
