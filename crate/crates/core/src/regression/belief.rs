//! Row-wise Gaussian belief over the state matrix and its conjugate update.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{LqrError, Result};
use crate::linalg;

/// Each row r_k of the unknown matrix is N(m_k, Σ). All rows see the same
/// regressors and noise level, so they share one covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBelief {
    /// Row k is the mean of r_k; the whole matrix is the mean matrix Ā.
    row_means: DMatrix<f64>,
    covariance: DMatrix<f64>,
    /// Σ⁻¹, carried alongside Σ so repeated updates never invert a sum.
    precision: DMatrix<f64>,
    noise_sigma: f64,
}

/// Replacements for the default prior.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorOverrides {
    pub mean: Option<DVector<f64>>,
    pub covariance: Option<DMatrix<f64>>,
}

/// Default prior for an n-state, m-input system: rows N(0, n·m·I_n).
pub fn make_prior(
    n: usize,
    m: usize,
    overrides: &PriorOverrides,
    noise_sigma: f64,
) -> Result<MatrixBelief> {
    if n == 0 || m == 0 {
        return Err(LqrError::field("prior", "dimensions must be at least 1"));
    }
    let mean = match &overrides.mean {
        Some(v) if v.len() != n => return Err(LqrError::dims("prior mean", n, v.len())),
        Some(v) => v.clone(),
        None => DVector::zeros(n),
    };
    let covariance = match &overrides.covariance {
        Some(c) if c.nrows() != n || c.ncols() != n => {
            return Err(LqrError::dims(
                "prior covariance",
                format!("{n}x{n}"),
                format!("{}x{}", c.nrows(), c.ncols()),
            ))
        }
        Some(c) => c.clone(),
        None => DMatrix::identity(n, n) * (n * m) as f64,
    };
    let row_means = DMatrix::from_fn(n, n, |_, j| mean[j]);
    MatrixBelief::new(row_means, covariance, noise_sigma)
}

fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    m.clone()
        .cholesky()
        .ok_or(LqrError::NotPositiveDefinite { what })
}

impl MatrixBelief {
    pub fn new(row_means: DMatrix<f64>, covariance: DMatrix<f64>, noise_sigma: f64) -> Result<Self> {
        let n = covariance.nrows();
        if covariance.ncols() != n || row_means.ncols() != n {
            return Err(LqrError::dims(
                "belief",
                format!("{n}x{n}"),
                format!("{}x{}", row_means.nrows(), row_means.ncols()),
            ));
        }
        if !(noise_sigma.is_finite() && noise_sigma > 0.0) {
            return Err(LqrError::field("noise_sigma", "σ must be positive"));
        }
        if !linalg::all_finite(&row_means) || !linalg::all_finite(&covariance) {
            return Err(LqrError::NonFinite { what: "belief" });
        }
        let covariance = linalg::symmetrize(&covariance);
        let precision = linalg::symmetrize(&cholesky(&covariance, "prior covariance")?.inverse());
        Ok(MatrixBelief {
            row_means,
            covariance,
            precision,
            noise_sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// Ā, the rows stacked.
    pub fn mean_matrix(&self) -> &DMatrix<f64> {
        &self.row_means
    }

    pub fn row_mean(&self, k: usize) -> DVector<f64> {
        self.row_means.row(k).transpose()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Posterior after observing `batch`:
    /// Σ'⁻¹ = XXᵀ/σ² + Σ⁻¹ and m'_k = Σ'(X y_k/σ² + Σ⁻¹ m_k).
    pub fn bayes_update(&self, batch: &RegressionBatch) -> Result<MatrixBelief> {
        let n = self.dim();
        if batch.regressors.nrows() != n || batch.targets.nrows() != n {
            return Err(LqrError::dims(
                "regression batch rows",
                n,
                format!("{}/{}", batch.regressors.nrows(), batch.targets.nrows()),
            ));
        }
        if batch.regressors.ncols() != batch.targets.ncols() {
            return Err(LqrError::dims(
                "regression batch columns",
                batch.regressors.ncols(),
                batch.targets.ncols(),
            ));
        }
        if !linalg::all_finite(&batch.regressors) || !linalg::all_finite(&batch.targets) {
            return Err(LqrError::NonFinite { what: "regression batch" });
        }
        if batch.is_empty() {
            return Ok(self.clone());
        }
        let inv_var = 1.0 / (self.noise_sigma * self.noise_sigma);
        let x = &batch.regressors;
        let precision = linalg::symmetrize(&(x * x.transpose() * inv_var + &self.precision));
        let chol = cholesky(&precision, "posterior precision")?;
        // Columns of the right-hand side are X y_k/σ² + Σ⁻¹ m_k, one per row k.
        let rhs = x * batch.targets.transpose() * inv_var + &self.precision * self.row_means.transpose();
        let row_means = chol.solve(&rhs).transpose();
        let covariance = linalg::symmetrize(&chol.inverse());
        Ok(MatrixBelief {
            row_means,
            covariance,
            precision,
            noise_sigma: self.noise_sigma,
        })
    }

    pub fn snapshot(&self) -> BeliefSnapshot {
        BeliefSnapshot {
            mean_matrix: linalg::to_rows(&self.row_means),
            covariance: linalg::to_rows(&self.covariance),
            covariance_trace: self.covariance.trace(),
        }
    }
}

/// Serializable view of a belief.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefSnapshot {
    pub mean_matrix: Vec<Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub covariance_trace: f64,
}

/// Regressors X (n×S, columns are states) and targets Y (n×S, row k holds the
/// observations of component k).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBatch {
    pub regressors: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl RegressionBatch {
    pub fn empty(n: usize) -> Self {
        RegressionBatch {
            regressors: DMatrix::zeros(n, 0),
            targets: DMatrix::zeros(n, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.regressors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// [X₁ X₂], [Y₁ Y₂].
    pub fn concat(&self, other: &RegressionBatch) -> RegressionBatch {
        let n = self.regressors.nrows();
        let cols = self.len() + other.len();
        let mut regressors = DMatrix::zeros(n, cols);
        let mut targets = DMatrix::zeros(n, cols);
        regressors.columns_mut(0, self.len()).copy_from(&self.regressors);
        regressors.columns_mut(self.len(), other.len()).copy_from(&other.regressors);
        targets.columns_mut(0, self.len()).copy_from(&self.targets);
        targets.columns_mut(self.len(), other.len()).copy_from(&other.targets);
        RegressionBatch { regressors, targets }
    }
}
