//! Finite-difference weights confined to one constant-control block.
//!
//! A block of order p spans p+1 equally spaced nodes 0..=p. For each evaluation
//! node k < p the weights c_0..c_p satisfy Σ_j c_j (j−k)^d = δ_{d,1} for
//! d = 0..=p, so x'(t_k) ≈ (1/Δt) Σ_j c_j x(t_j) is exact on polynomials of
//! degree ≤ p.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LqrError, Result};
use crate::problem::SUPPORTED_ORDERS;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StencilTable {
    order: usize,
    /// `weights[k]` evaluates the derivative at in-block node k.
    weights: Vec<Vec<f64>>,
}

impl StencilTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self, offset: usize) -> &[f64] {
        &self.weights[offset]
    }

    /// Builds a table from explicit weights, e.g. to check that a perturbed
    /// table is caught by the exactness test.
    pub fn from_weights(order: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != order || weights.iter().any(|w| w.len() != order + 1) {
            return Err(LqrError::dims(
                "stencil weights",
                format!("{order} rows of {}", order + 1),
                format!("{} rows", weights.len()),
            ));
        }
        Ok(StencilTable { order, weights })
    }

    /// Derivative estimate at in-block node `offset` from the p+1 block samples.
    pub fn derivative(&self, offset: usize, samples: &[DVector<f64>], dt: f64) -> DVector<f64> {
        debug_assert_eq!(samples.len(), self.order + 1);
        let mut out = DVector::zeros(samples[0].len());
        for (c, x) in self.weights[offset].iter().zip(samples) {
            out.axpy(*c, x, 1.0);
        }
        out / dt
    }

    /// Largest violation of the moment conditions over all offsets and degrees,
    /// for samples of t^d at spacing `dt` relative to the exact derivative, scaled by Δt.
    pub fn moment_defect(&self, dt: f64) -> f64 {
        let p = self.order;
        let mut worst = 0.0f64;
        for (k, w) in self.weights.iter().enumerate() {
            for d in 0..=p {
                // d/dt t^d at t_k, with t_j = j·dt.
                let exact = if d == 0 {
                    0.0
                } else {
                    d as f64 * (k as f64 * dt).powi(d as i32 - 1)
                };
                let approx: f64 = w
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * (j as f64 * dt).powi(d as i32))
                    .sum::<f64>()
                    / dt;
                worst = worst.max((approx - exact).abs() * dt);
            }
        }
        worst
    }
}

/// Solves the moment system for each in-block offset.
pub fn build_stencils(order: usize) -> Result<StencilTable> {
    if !SUPPORTED_ORDERS.contains(&order) {
        return Err(LqrError::UnsupportedOrder(order));
    }
    let p = order;
    let weights = (0..p)
        .map(|k| {
            let vandermonde =
                DMatrix::from_fn(p + 1, p + 1, |d, j| (j as f64 - k as f64).powi(d as i32));
            let mut rhs = DVector::zeros(p + 1);
            rhs[1] = 1.0;
            let c = vandermonde
                .lu()
                .solve(&rhs)
                .expect("Vandermonde matrix on distinct nodes is invertible");
            c.iter().copied().collect()
        })
        .collect();
    Ok(StencilTable { order, weights })
}
