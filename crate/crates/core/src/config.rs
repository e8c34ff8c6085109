//! JSON run configuration. Matrices are row-major arrays of rows; `n` and `m`
//! are stated explicitly and every matrix is checked against them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};
use crate::harness::SweepOptions;
use crate::linalg::{from_rows, to_rows};
use crate::problem::{default_noise_sigma, default_steps_per_round, MeasurementNoise, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Prior mean shared by every row of the matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Prior mean of the whole matrix, one row per state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub m: usize,
    pub a_true: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub q_f: Vec<Vec<f64>>,
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_list: Option<Vec<usize>>,
    /// S; defaults to 2p.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_round: Option<usize>,
    /// σ; defaults to √(10Δt^p).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_noise: Option<MeasurementNoise>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

fn matrix(field: &'static str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>> {
    let got = format!("{}×{}", rows.len(), rows.first().map_or(0, Vec::len));
    let mat = from_rows(rows).ok_or_else(|| LqrError::field(field, format!("ragged rows (expected {r}×{c})")))?;
    if mat.shape() != (r, c) {
        return Err(LqrError::field(field, format!("expected {r}×{c}, got {got}")));
    }
    Ok(mat)
}

fn vector(field: &'static str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(LqrError::field(field, format!("expected length {len}, got {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| LqrError::field("config", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The fully explicit config describing `spec`.
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        let prior = PriorConfig {
            mean: spec
                .prior_mean_rows
                .is_none()
                .then(|| spec.prior_mean.iter().copied().collect()),
            mean_matrix: spec.prior_mean_rows.as_ref().map(to_rows),
            covariance: Some(to_rows(&spec.prior_cov)),
        };
        RunConfig {
            n: spec.state_dim(),
            m: spec.control_dim(),
            a_true: to_rows(&spec.a_true),
            b: to_rows(&spec.b),
            q: to_rows(&spec.q),
            r: to_rows(&spec.r),
            q_f: to_rows(&spec.q_f),
            horizon: spec.horizon,
            x0: spec.x0.iter().copied().collect(),
            dt: Some(spec.dt),
            dt_list: None,
            scheme_order: Some(spec.scheme_order),
            p_list: None,
            steps_per_round: Some(spec.steps_per_round),
            sigma: Some(spec.noise_sigma),
            prior: Some(prior),
            measurement_noise: spec.measurement_noise,
            output: None,
        }
    }

    /// Spec for the cell (Δt, p); S and σ follow their default rules unless fixed here.
    pub fn spec_for(&self, dt: f64, p: usize) -> Result<ProblemSpec> {
        let (n, m) = (self.n, self.m);
        if n == 0 {
            return Err(LqrError::field("n", "must be at least 1"));
        }
        if m == 0 {
            return Err(LqrError::field("m", "must be at least 1"));
        }
        let prior = self.prior.clone().unwrap_or_default();
        if prior.mean.is_some() && prior.mean_matrix.is_some() {
            return Err(LqrError::field("prior", "give either `mean` or `mean_matrix`, not both"));
        }
        let mut spec = ProblemSpec::with_defaults(
            matrix("a_true", &self.a_true, n, n)?,
            matrix("b", &self.b, n, m)?,
            matrix("q", &self.q, n, n)?,
            matrix("r", &self.r, m, m)?,
            matrix("q_f", &self.q_f, n, n)?,
            self.horizon,
            vector("x0", &self.x0, n)?,
            dt,
            p,
        );
        spec.steps_per_round = self.steps_per_round.unwrap_or_else(|| default_steps_per_round(p));
        spec.noise_sigma = self.sigma.unwrap_or_else(|| default_noise_sigma(dt, p));
        if let Some(mean) = &prior.mean {
            spec.prior_mean = vector("prior.mean", mean, n)?;
        }
        if let Some(rows) = &prior.mean_matrix {
            spec.prior_mean_rows = Some(matrix("prior.mean_matrix", rows, n, n)?);
        }
        if let Some(cov) = &prior.covariance {
            spec.prior_cov = matrix("prior.covariance", cov, n, n)?;
        }
        spec.measurement_noise = self.measurement_noise;
        Ok(spec)
    }

    /// Spec for a single run; needs `dt` and `scheme_order`.
    pub fn spec(&self) -> Result<ProblemSpec> {
        let dt = self.dt.ok_or_else(|| LqrError::field("dt", "required for a single run"))?;
        let p = self
            .scheme_order
            .ok_or_else(|| LqrError::field("scheme_order", "required for a single run"))?;
        self.spec_for(dt, p)
    }

    /// Δt and p values of a sweep; single values count as one-element lists.
    pub fn sweep_lists(&self) -> Result<(Vec<f64>, Vec<usize>)> {
        let dts = match (&self.dt_list, self.dt) {
            (Some(_), Some(_)) => return Err(LqrError::field("dt_list", "give either `dt` or `dt_list`")),
            (Some(list), None) => list.clone(),
            (None, Some(dt)) => vec![dt],
            (None, None) => return Err(LqrError::field("dt_list", "required for a sweep")),
        };
        let ps = match (&self.p_list, self.scheme_order) {
            (Some(_), Some(_)) => return Err(LqrError::field("p_list", "give either `scheme_order` or `p_list`")),
            (Some(list), None) => list.clone(),
            (None, Some(p)) => vec![p],
            (None, None) => return Err(LqrError::field("p_list", "required for a sweep")),
        };
        if dts.is_empty() {
            return Err(LqrError::field("dt_list", "empty"));
        }
        if ps.is_empty() {
            return Err(LqrError::field("p_list", "empty"));
        }
        Ok((dts, ps))
    }

    pub fn sweep_options(&self, parallel: bool) -> SweepOptions {
        SweepOptions {
            sigma: self.sigma,
            steps_per_round: self.steps_per_round,
            parallel,
        }
    }

    pub fn output_dir(&self) -> Option<&str> {
        self.output.as_ref().and_then(|o| o.dir.as_deref())
    }

    pub fn output_format(&self) -> Option<OutputFormat> {
        self.output.as_ref().and_then(|o| o.format)
    }
}
