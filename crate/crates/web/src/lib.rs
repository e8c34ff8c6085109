//! Browser bindings. Each export returns a JSON string; the plain functions
//! underneath are ordinary Rust and are tested natively.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use online_lqr::controller::reference_gains;
use online_lqr::harness::{a_error, cell_spec, reported_cost, SweepOptions};
use online_lqr::{fixtures, run_online, run_reference, LqrError, ProblemSpec, Trajectory};

fn scenario(name: &str, dt: f64, p: usize) -> Result<ProblemSpec, LqrError> {
    let base = match name {
        "test1" => fixtures::test1(dt, p),
        "test2" => fixtures::test2(),
        other => {
            return Err(LqrError::InvalidField {
                field: "scenario",
                reason: format!("unknown scenario `{other}`"),
            })
        }
    };
    Ok(cell_spec(&base, dt, p, &SweepOptions::default()))
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl From<&Trajectory> for Series {
    fn from(tr: &Trajectory) -> Self {
        let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
        Series {
            t: tr.times.clone(),
            x: rows(&tr.states),
            u: rows(&tr.controls),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub online: Series,
    pub reference: Series,
    pub online_cost: f64,
    pub reference_cost: f64,
    pub round_end: Vec<f64>,
    pub a_error: Vec<f64>,
    pub covariance_trace: Vec<f64>,
}

/// Online run against the known-model reference. `prior_scale` multiplies
/// the prior covariance.
pub fn simulate_native(name: &str, dt: f64, p: usize, prior_scale: f64) -> Result<Simulation, LqrError> {
    let mut spec = scenario(name, dt, p)?;
    spec.prior_cov *= prior_scale;
    let v = spec.validate()?;
    let online = run_online(&v)?;
    let reference = run_reference(&v)?;
    let grid = v.grid();
    let mut a_err = Vec::with_capacity(online.rounds.len());
    for r in &online.rounds {
        let mean = online_lqr::linalg::from_rows(&r.belief.mean_matrix).expect("square mean");
        a_err.push(a_error(&mean, v.a_true())?);
    }
    Ok(Simulation {
        online: (&online.trajectory).into(),
        reference: (&reference.trajectory).into(),
        online_cost: reported_cost(online.objective),
        reference_cost: reported_cost(reference.objective),
        round_end: online
            .rounds
            .iter()
            .map(|r| grid.time(r.start_node + r.controls.len()))
            .collect(),
        a_error: a_err,
        covariance_trace: online.rounds.iter().map(|r| r.belief.covariance_trace).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct GainCurves {
    pub t: Vec<f64>,
    /// K(t) entries flattened row-major, one vector per node.
    pub reference: Vec<Vec<f64>>,
    pub online: Vec<Vec<f64>>,
}

/// Gains used by the online controller next to the known-model gains.
pub fn gain_curves_native(name: &str, dt: f64, p: usize) -> Result<GainCurves, LqrError> {
    let v = scenario(name, dt, p)?.validate()?;
    let online = run_online(&v)?;
    let reference = reference_gains(&v)?;
    let steps = v.grid().steps();
    let flat = |k: &DMatrix<f64>| k.transpose().iter().copied().collect::<Vec<f64>>();
    Ok(GainCurves {
        t: (0..steps).map(|k| v.grid().time(k)).collect(),
        reference: reference[..steps].iter().map(flat).collect(),
        online: online
            .rounds
            .iter()
            .flat_map(|r| r.gains.iter().map(|k| k.iter().flatten().copied().collect()))
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct ErrorCurve {
    pub p: usize,
    pub dt: Vec<f64>,
    pub error: Vec<f64>,
}

/// Final estimation error of the oscillator's matrix against Δt for each scheme order.
pub fn error_sweep_native(dts: &[f64], orders: &[usize]) -> Result<Vec<ErrorCurve>, LqrError> {
    orders
        .iter()
        .map(|&p| {
            let mut curve = ErrorCurve {
                p,
                dt: Vec::new(),
                error: Vec::new(),
            };
            for &dt in dts {
                let v = fixtures::test1(dt, p).validate()?;
                let run = run_online(&v)?;
                curve.dt.push(dt);
                curve.error.push(a_error(run.final_belief.mean_matrix(), v.a_true())?);
            }
            Ok(curve)
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, LqrError>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn simulate(scenario: &str, dt: f64, p: usize, prior_scale: f64) -> Result<String, JsError> {
    to_js(simulate_native(scenario, dt, p, prior_scale))
}

#[wasm_bindgen(js_name = gainCurves)]
pub fn gain_curves(scenario: &str, dt: f64, p: usize) -> Result<String, JsError> {
    to_js(gain_curves_native(scenario, dt, p))
}

#[wasm_bindgen(js_name = errorSweep)]
pub fn error_sweep(dts: Vec<f64>, orders: Vec<usize>) -> Result<String, JsError> {
    to_js(error_sweep_native(&dts, &orders))
}
