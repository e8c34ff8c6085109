//! LQR instance, discretization schedule and the quadratic cost.
//!
//! A [`ProblemSpec`] is the raw description. [`ProblemSpec::validate`] turns it
//! into a [`ValidatedSpec`], which splits the data into the part a controller
//! is allowed to see ([`KnownProblem`]) and the hidden state matrix used only to
//! simulate the plant and to grade estimates.

use nalgebra::{DMatrix, DVector};

use crate::error::{LqrError, Result};
use crate::linalg::{self, SYMMETRY_TOL};
use crate::regression::{make_prior, MatrixBelief, PriorOverrides};

/// Ratio T/Δt must be within this distance of an integer.
pub const GRID_RATIO_TOL: f64 = 1e-9;

/// Scheme orders with a supported stencil family.
pub const SUPPORTED_ORDERS: [usize; 3] = [1, 2, 4];

/// Default regression noise scale for a step `dt` and scheme order `p`: √(10·Δt^p).
pub fn default_noise_sigma(dt: f64, order: usize) -> f64 {
    (10.0 * dt.powi(order as i32)).sqrt()
}

/// Default number of steps per round for scheme order `p`: 2p.
pub fn default_steps_per_round(order: usize) -> usize {
    2 * order
}

/// Additive Gaussian noise on the observed states. Zero by default.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementNoise {
    pub std: f64,
    pub seed: u64,
}

/// Raw LQR problem plus discretization and algorithm parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// The hidden state matrix. Only the plant and the grading code read it.
    pub a_true: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub dt: f64,
    pub scheme_order: usize,
    pub steps_per_round: usize,
    pub noise_sigma: f64,
    pub prior_mean: DVector<f64>,
    /// Per-row prior means; replaces `prior_mean` for every row when present.
    pub prior_mean_rows: Option<DMatrix<f64>>,
    pub prior_cov: DMatrix<f64>,
    pub measurement_noise: Option<MeasurementNoise>,
}

impl ProblemSpec {
    /// Builds a spec with the default prior (zero mean, n·m·I), S = 2p and σ = √(10Δt^p).
    #[allow(clippy::too_many_arguments)]
    pub fn with_defaults(
        a_true: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        q_f: DMatrix<f64>,
        horizon: f64,
        x0: DVector<f64>,
        dt: f64,
        scheme_order: usize,
    ) -> Self {
        let n = b.nrows();
        let m = b.ncols();
        ProblemSpec {
            a_true,
            b,
            q,
            q_f,
            r,
            horizon,
            x0,
            dt,
            scheme_order,
            steps_per_round: default_steps_per_round(scheme_order),
            noise_sigma: default_noise_sigma(dt, scheme_order),
            prior_mean: DVector::zeros(n),
            prior_mean_rows: None,
            prior_cov: DMatrix::identity(n, n) * (n * m) as f64,
            measurement_noise: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Checks every invariant and caches the derived quantities.
    pub fn validate(&self) -> Result<ValidatedSpec> {
        let n = self.b.nrows();
        let m = self.b.ncols();
        if n == 0 {
            return Err(LqrError::field("b", "state dimension must be at least 1"));
        }
        if m == 0 {
            return Err(LqrError::field("b", "control dimension must be at least 1"));
        }
        check_shape("a_true", &self.a_true, n, n)?;
        check_shape("q", &self.q, n, n)?;
        check_shape("q_f", &self.q_f, n, n)?;
        check_shape("r", &self.r, m, m)?;
        check_shape("prior_cov", &self.prior_cov, n, n)?;
        if self.x0.len() != n {
            return Err(LqrError::dims("x0", n, self.x0.len()));
        }
        if self.prior_mean.len() != n {
            return Err(LqrError::dims("prior_mean", n, self.prior_mean.len()));
        }
        for (name, mat) in [
            ("a_true", &self.a_true),
            ("b", &self.b),
            ("q", &self.q),
            ("q_f", &self.q_f),
            ("r", &self.r),
            ("prior_cov", &self.prior_cov),
        ] {
            if !linalg::all_finite(mat) {
                return Err(LqrError::field(name, "entries must be finite"));
            }
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(LqrError::field("x0", "entries must be finite"));
        }
        if !self.prior_mean.iter().all(|v| v.is_finite()) {
            return Err(LqrError::field("prior_mean", "entries must be finite"));
        }
        if let Some(rows) = &self.prior_mean_rows {
            check_shape("prior_mean_rows", rows, n, n)?;
            if !linalg::all_finite(rows) {
                return Err(LqrError::field("prior_mean_rows", "entries must be finite"));
            }
        }

        check_psd("q", &self.q)?;
        check_psd("q_f", &self.q_f)?;
        check_pd("r", "R not positive definite", &self.r)?;
        check_pd("prior_cov", "prior covariance not positive definite", &self.prior_cov)?;

        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(LqrError::field("horizon", "T must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(LqrError::field("dt", "Δt must be positive"));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > GRID_RATIO_TOL || steps < 1.0 {
            return Err(LqrError::field(
                "dt",
                format!("T/Δt not integer ({ratio})"),
            ));
        }
        let steps = steps as usize;

        let p = self.scheme_order;
        if !SUPPORTED_ORDERS.contains(&p) {
            return Err(LqrError::field(
                "scheme_order",
                format!("unsupported order {p}; expected 1, 2 or 4"),
            ));
        }
        let s = self.steps_per_round;
        if s == 0 || !s.is_multiple_of(p) {
            return Err(LqrError::field(
                "steps_per_round",
                format!("S not multiple of p (S = {s}, p = {p})"),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(LqrError::field("noise_sigma", "σ must be positive"));
        }
        if let Some(noise) = &self.measurement_noise {
            if !(noise.std.is_finite() && noise.std >= 0.0) {
                return Err(LqrError::field(
                    "measurement_noise",
                    "standard deviation must be non-negative",
                ));
            }
        }

        let grid = TimeGrid {
            dt: self.dt,
            steps,
            steps_per_round: s,
            block_len: p,
        };
        Ok(ValidatedSpec {
            known: KnownProblem {
                b: self.b.clone(),
                q: self.q.clone(),
                q_f: self.q_f.clone(),
                r: self.r.clone(),
                horizon: self.horizon,
                x0: self.x0.clone(),
                scheme_order: p,
                noise_sigma: self.noise_sigma,
                prior_mean: self.prior_mean.clone(),
                prior_mean_rows: self.prior_mean_rows.clone(),
                prior_cov: self.prior_cov.clone(),
                grid,
            },
            a_true: self.a_true.clone(),
            measurement_noise: self.measurement_noise.filter(|n| n.std > 0.0),
        })
    }
}

fn check_shape(field: &'static str, mat: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(LqrError::dims(
            field,
            format!("{rows}x{cols}"),
            format!("{}x{}", mat.nrows(), mat.ncols()),
        ));
    }
    Ok(())
}

fn check_symmetric(field: &'static str, mat: &DMatrix<f64>) -> Result<()> {
    let scale = mat.amax().max(1.0);
    if linalg::asymmetry(mat) > SYMMETRY_TOL * scale {
        return Err(LqrError::field(field, "matrix not symmetric"));
    }
    Ok(())
}

fn check_psd(field: &'static str, mat: &DMatrix<f64>) -> Result<()> {
    check_symmetric(field, mat)?;
    let scale = mat.amax().max(1.0);
    if linalg::min_eigenvalue(mat) < -SYMMETRY_TOL * scale {
        return Err(LqrError::field(field, "matrix not positive semi-definite"));
    }
    Ok(())
}

fn check_pd(field: &'static str, message: &str, mat: &DMatrix<f64>) -> Result<()> {
    check_symmetric(field, mat)?;
    if linalg::min_eigenvalue(mat) <= 0.0 || mat.clone().cholesky().is_none() {
        return Err(LqrError::field(field, message));
    }
    Ok(())
}

/// Uniform grid t_k = kΔt, k = 0..N, grouped into rounds of S steps and blocks of p steps.
///
/// If S does not divide N the final round keeps the remaining steps, and if p
/// does not divide those the final block is cut short at T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
    steps_per_round: usize,
    block_len: usize,
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// N, the number of steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn steps_per_round(&self) -> usize {
        self.steps_per_round
    }

    /// Steps per constant-control block (the scheme order p).
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// ⌈N/S⌉. When S does not divide N the last round is shorter.
    pub fn rounds(&self) -> usize {
        self.steps.div_ceil(self.steps_per_round)
    }

    /// Steps in round `round` (numbered from 1).
    pub fn round_len(&self, round: usize) -> usize {
        let start = (round - 1) * self.steps_per_round;
        self.steps_per_round.min(self.steps.saturating_sub(start))
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    /// t_k.
    pub fn time(&self, node: usize) -> f64 {
        node as f64 * self.dt
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Node index of t_i^j = t_{i-1} + jΔt, with rounds numbered from 1.
    pub fn round_node(&self, round: usize, j: usize) -> usize {
        debug_assert!(round >= 1 && j <= self.steps_per_round);
        (round - 1) * self.steps_per_round + j
    }

    /// t_i, the right end of round i (t_0 = 0).
    pub fn round_boundary(&self, round: usize) -> f64 {
        self.time(round * self.steps_per_round)
    }

    pub fn is_block_start(&self, node: usize) -> bool {
        node.is_multiple_of(self.block_len)
    }

    /// Maps a time back to its node, failing for off-grid times.
    pub fn node_of(&self, t: f64) -> Result<usize> {
        let ratio = t / self.dt;
        let k = ratio.round();
        if !(0.0..=self.steps as f64).contains(&k) || (ratio - k).abs() > 1e-9 {
            return Err(LqrError::OffGrid { what: "time", t });
        }
        Ok(k as usize)
    }
}

/// Everything the controller may use. The true state matrix is not here.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownProblem {
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_f: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: f64,
    pub x0: DVector<f64>,
    pub scheme_order: usize,
    pub noise_sigma: f64,
    pub prior_mean: DVector<f64>,
    pub prior_mean_rows: Option<DMatrix<f64>>,
    pub prior_cov: DMatrix<f64>,
    pub grid: TimeGrid,
}

impl KnownProblem {
    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// π₀ built from the prior fields.
    pub fn initial_belief(&self) -> Result<MatrixBelief> {
        let mut belief = make_prior(
            self.state_dim(),
            self.control_dim(),
            &PriorOverrides {
                mean: Some(self.prior_mean.clone()),
                covariance: Some(self.prior_cov.clone()),
            },
            self.noise_sigma,
        )?;
        if let Some(rows) = &self.prior_mean_rows {
            belief = MatrixBelief::new(rows.clone(), self.prior_cov.clone(), self.noise_sigma)?;
        }
        Ok(belief)
    }
}

/// A spec that passed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec {
    known: KnownProblem,
    a_true: DMatrix<f64>,
    measurement_noise: Option<MeasurementNoise>,
}

impl ValidatedSpec {
    pub fn known(&self) -> &KnownProblem {
        &self.known
    }

    /// The hidden dynamics. For simulation and grading only.
    pub fn a_true(&self) -> &DMatrix<f64> {
        &self.a_true
    }

    pub fn measurement_noise(&self) -> Option<MeasurementNoise> {
        self.measurement_noise
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.known.grid
    }

    /// Replaces the hidden matrix without touching anything the controller sees.
    pub fn with_a_true(&self, a_true: DMatrix<f64>) -> Result<Self> {
        check_shape("a_true", &a_true, self.known.state_dim(), self.known.state_dim())?;
        Ok(ValidatedSpec {
            a_true,
            ..self.clone()
        })
    }

    /// Back to the raw form; `validate` on the result reproduces `self`.
    pub fn to_spec(&self) -> ProblemSpec {
        let k = &self.known;
        ProblemSpec {
            a_true: self.a_true.clone(),
            b: k.b.clone(),
            q: k.q.clone(),
            q_f: k.q_f.clone(),
            r: k.r.clone(),
            horizon: k.horizon,
            x0: k.x0.clone(),
            dt: k.grid.dt,
            scheme_order: k.scheme_order,
            steps_per_round: k.grid.steps_per_round,
            noise_sigma: k.noise_sigma,
            prior_mean: k.prior_mean.clone(),
            prior_mean_rows: k.prior_mean_rows.clone(),
            prior_cov: k.prior_cov.clone(),
            measurement_noise: self.measurement_noise,
        }
    }
}

/// States on every node and the control held on each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `controls[k]` is held on [t_k, t_{k+1}).
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// J = ½(∫ xᵀQx + uᵀRu dt + x(T)ᵀ Q_f x(T)).
///
/// The state term uses the composite trapezoidal rule; the control term is
/// integrated exactly since u is constant on each step.
pub fn cost_of(trajectory: &Trajectory, problem: &KnownProblem) -> Result<f64> {
    let grid = &problem.grid;
    let n_steps = grid.steps();
    if trajectory.states.len() != n_steps + 1 {
        return Err(LqrError::dims("trajectory states", n_steps + 1, trajectory.states.len()));
    }
    if trajectory.controls.len() != n_steps {
        return Err(LqrError::dims("trajectory controls", n_steps, trajectory.controls.len()));
    }
    if trajectory.times.len() != n_steps + 1 {
        return Err(LqrError::dims("trajectory times", n_steps + 1, trajectory.times.len()));
    }
    let n = problem.state_dim();
    let m = problem.control_dim();
    if let Some(x) = trajectory.states.iter().find(|x| x.len() != n) {
        return Err(LqrError::dims("state", n, x.len()));
    }
    if let Some(u) = trajectory.controls.iter().find(|u| u.len() != m) {
        return Err(LqrError::dims("control", m, u.len()));
    }

    let dt = grid.dt();
    let state_term: Vec<f64> = trajectory
        .states
        .iter()
        .map(|x| linalg::quad_form(&problem.q, x))
        .collect();
    let mut integral = 0.0;
    for k in 0..n_steps {
        integral += 0.5 * dt * (state_term[k] + state_term[k + 1]);
        integral += dt * linalg::quad_form(&problem.r, &trajectory.controls[k]);
    }
    let terminal = linalg::quad_form(&problem.q_f, trajectory.final_state());
    Ok(0.5 * (integral + terminal))
}
