use nalgebra::{DMatrix, DVector};

use super::belief::RegressionBatch;
use super::stencil::StencilTable;
use crate::error::{LqrError, Result};

/// Turns one round of observed states into regression data.
///
/// `states` holds the S+1 nodes of the round (the last one is the first node of
/// the next round) and `controls` the S held controls. For every block of p
/// steps and every in-block offset k < p one column is emitted: regressor
/// x(t_k) and target ẋ(t_k) − B u_block, where ẋ comes from the order-p stencil
/// on the block's p+1 nodes. A trailing block shorter than p (cut off by the
/// horizon) has no stencil that fits and contributes nothing.
pub fn extract_observations(
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    b: &DMatrix<f64>,
    dt: f64,
    stencils: &StencilTable,
) -> Result<RegressionBatch> {
    let p = stencils.order();
    let steps = controls.len();
    if states.len() != steps + 1 {
        return Err(LqrError::dims("round states", steps + 1, states.len()));
    }
    let n = b.nrows();
    if let Some(x) = states.iter().find(|x| x.len() != n) {
        return Err(LqrError::dims("state", n, x.len()));
    }
    if let Some(u) = controls.iter().find(|u| u.len() != b.ncols()) {
        return Err(LqrError::dims("control", b.ncols(), u.len()));
    }

    let blocks = steps / p;
    let mut regressors = DMatrix::zeros(n, blocks * p);
    let mut targets = DMatrix::zeros(n, blocks * p);
    for block in 0..blocks {
        let first = block * p;
        let u = &controls[first];
        if let Some(off) = controls[first..first + p].iter().position(|v| v != u) {
            return Err(LqrError::ControlNotHeld { node: first + off });
        }
        let forcing = b * u;
        let samples = &states[first..=first + p];
        for k in 0..p {
            let derivative = stencils.derivative(k, samples, dt);
            regressors.set_column(first + k, &samples[k]);
            targets.set_column(first + k, &(derivative - &forcing));
        }
    }
    if !regressors.iter().chain(targets.iter()).all(|v| v.is_finite()) {
        return Err(LqrError::NonFinite { what: "observations" });
    }
    Ok(RegressionBatch {
        regressors,
        targets,
    })
}
