//! Exact simulation of ẋ = Âx + Bu under a zero-order-hold control.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LqrError, Result};
use crate::problem::{MeasurementNoise, Trajectory, ValidatedSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub t: f64,
    pub x: DVector<f64>,
}

/// Advances the state by `dt` with `u` held constant.
///
/// Exponentiates the (n+1)×(n+1) block matrix [[A, Bu], [0, 0]]·dt; the top-left
/// block is e^{A dt} and the top-right column is (∫₀^dt e^{As} ds)·Bu.
pub fn step(
    state: &PlantState,
    u: &DVector<f64>,
    dt: f64,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<PlantState> {
    let n = a.nrows();
    if state.x.len() != n {
        return Err(LqrError::dims("plant state", n, state.x.len()));
    }
    if u.len() != b.ncols() {
        return Err(LqrError::dims("control", b.ncols(), u.len()));
    }
    let forcing = b * u;
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(forcing * dt));
    let e = aug.exp();
    let x = e.view((0, 0), (n, n)) * &state.x + e.view((0, n), (n, 1));
    let t = state.t + dt;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(LqrError::PlantDivergence { t });
    }
    Ok(PlantState { t, x })
}

/// The true system, stepped one Δt at a time. Records the true trajectory and
/// hands out (possibly noisy) observations.
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    dt: f64,
    node: usize,
    steps: usize,
    state: PlantState,
    observed: DVector<f64>,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    controls: Vec<DVector<f64>>,
}

impl Plant {
    pub fn new(spec: &ValidatedSpec) -> Self {
        let known = spec.known();
        let grid = &known.grid;
        let noise = spec.measurement_noise().map(|MeasurementNoise { std, seed }| {
            (
                Normal::new(0.0, std).expect("validated standard deviation"),
                ChaCha8Rng::seed_from_u64(seed),
            )
        });
        let state = PlantState {
            t: 0.0,
            x: known.x0.clone(),
        };
        let mut plant = Plant {
            a: spec.a_true().clone(),
            b: known.b.clone(),
            dt: grid.dt(),
            node: 0,
            steps: grid.steps(),
            observed: state.x.clone(),
            state,
            noise,
            times: Vec::with_capacity(grid.steps() + 1),
            states: Vec::with_capacity(grid.steps() + 1),
            controls: Vec::with_capacity(grid.steps()),
        };
        plant.record();
        plant
    }

    fn record(&mut self) {
        self.times.push(self.state.t);
        self.states.push(self.state.x.clone());
        self.observed = match &mut self.noise {
            Some((dist, rng)) => self.state.x.map(|v| v + dist.sample(rng)),
            None => self.state.x.clone(),
        };
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// The measured state at the current node.
    pub fn observe(&self) -> &DVector<f64> {
        &self.observed
    }

    /// Applies `u` on [t_k, t_{k+1}).
    pub fn advance(&mut self, u: &DVector<f64>) -> Result<()> {
        if self.node >= self.steps {
            return Err(LqrError::OffGrid {
                what: "step past the horizon",
                t: self.state.t,
            });
        }
        let next = step(&self.state, u, self.dt, &self.a, &self.b)?;
        self.node += 1;
        // Keep times on the grid instead of accumulating rounding.
        self.state = PlantState {
            t: self.node as f64 * self.dt,
            x: next.x,
        };
        self.controls.push(u.clone());
        self.record();
        Ok(())
    }

    pub fn into_trajectory(self) -> Trajectory {
        Trajectory {
            times: self.times,
            states: self.states,
            controls: self.controls,
        }
    }
}

/// Runs the plant over the whole grid. `policy(node, observed_state)` is queried
/// only at block starts and its control is held for the whole block (a block
/// cut short by the horizon is held until T).
pub fn rollout<F>(spec: &ValidatedSpec, mut policy: F) -> Result<Trajectory>
where
    F: FnMut(usize, &DVector<f64>) -> DVector<f64>,
{
    let grid = *spec.grid();
    let m = spec.known().control_dim();
    let mut plant = Plant::new(spec);
    while plant.node() < grid.steps() {
        let node = plant.node();
        let u = policy(node, plant.observe());
        if u.len() != m {
            return Err(LqrError::dims("policy control", m, u.len()));
        }
        for _ in 0..grid.block_len().min(grid.steps() - node) {
            plant.advance(&u)?;
        }
    }
    Ok(plant.into_trajectory())
}
