//! Experiment driver: single runs, Δt × p sweeps, error norms, observed
//! convergence orders and the CSV/JSON artifacts they produce.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::controller::{run_online, run_reference, OnlineRun, ReferenceRun};
use crate::error::{LqrError, Result};
use crate::problem::{default_noise_sigma, default_steps_per_round, ProblemSpec, Trajectory, ValidatedSpec};
use crate::regression::BeliefSnapshot;

pub const SCHEMA_VERSION: &str = "online-lqr/1";

/// How observations are laid out inside a round; recorded in every report.
pub const BLOCK_LAYOUT: &str =
    "control held on blocks of p steps; one observation per block node except the last, order-p stencil on the block's p+1 nodes";

/// Reported costs are ∫(xᵀQx + uᵀRu)dt + x(T)ᵀQ_f x(T), twice the objective J.
pub fn reported_cost(objective: f64) -> f64 {
    2.0 * objective
}

/// ‖Ā − Â‖_F.
pub fn a_error(belief_mean: &DMatrix<f64>, a_true: &DMatrix<f64>) -> Result<f64> {
    if belief_mean.shape() != a_true.shape() {
        return Err(LqrError::dims(
            "matrix error",
            format!("{:?}", a_true.shape()),
            format!("{:?}", belief_mean.shape()),
        ));
    }
    Ok((belief_mean - a_true).norm())
}

/// log(e₁/e₂) / log(Δt₁/Δt₂).
pub fn convergence_order(err_coarse: f64, err_fine: f64, dt_coarse: f64, dt_fine: f64) -> Result<f64> {
    if !(err_coarse > 0.0 && err_fine > 0.0 && dt_coarse > 0.0 && dt_fine > 0.0) || dt_coarse == dt_fine {
        return Err(LqrError::BadConvergenceInput);
    }
    Ok((err_coarse / err_fine).ln() / (dt_coarse / dt_fine).ln())
}

/// Summary of one online run next to its known-model baseline.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: &'static str,
    pub config: RunConfig,
    pub block_layout: &'static str,
    pub online_cost: f64,
    pub reference_cost: f64,
    /// J = ½(…) for the same runs.
    pub online_objective: f64,
    pub reference_objective: f64,
    pub final_a_error: f64,
    pub final_mean_matrix: Vec<Vec<f64>>,
    pub rounds: usize,
    pub covariance_trace: Vec<f64>,
}

/// One belief snapshot per round, as written to `beliefs.json`.
#[derive(Debug, Clone, Serialize)]
pub struct BeliefRecord {
    pub round: usize,
    pub t_end: f64,
    #[serde(flatten)]
    pub belief: BeliefSnapshot,
}

pub struct RunOutcome {
    pub online: OnlineRun,
    pub reference: ReferenceRun,
    pub report: RunReport,
}

impl RunOutcome {
    pub fn beliefs(&self, spec: &ValidatedSpec) -> Vec<BeliefRecord> {
        let grid = spec.grid();
        self.online
            .rounds
            .iter()
            .map(|r| BeliefRecord {
                round: r.round,
                t_end: grid.time(r.start_node + r.controls.len()),
                belief: r.belief.clone(),
            })
            .collect()
    }
}

/// Online and reference runs for a single validated spec.
pub fn run_pair(spec: &ValidatedSpec, config: RunConfig) -> Result<RunOutcome> {
    let online = run_online(spec)?;
    let reference = run_reference(spec)?;
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        config,
        block_layout: BLOCK_LAYOUT,
        online_cost: reported_cost(online.objective),
        reference_cost: reported_cost(reference.objective),
        online_objective: online.objective,
        reference_objective: reference.objective,
        final_a_error: a_error(online.final_belief.mean_matrix(), spec.a_true())?,
        final_mean_matrix: crate::linalg::to_rows(online.final_belief.mean_matrix()),
        rounds: online.rounds.len(),
        covariance_trace: online.rounds.iter().map(|r| r.belief.covariance_trace).collect(),
    };
    Ok(RunOutcome {
        online,
        reference,
        report,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepOptions {
    /// Fixed σ for every cell instead of √(10Δt^p).
    pub sigma: Option<f64>,
    /// Fixed S for every cell instead of 2p.
    pub steps_per_round: Option<usize>,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub dt: f64,
    pub p: usize,
    pub steps_per_round: usize,
    pub sigma: f64,
    pub status: CellStatus,
    pub online_cost: Option<f64>,
    pub reference_cost: Option<f64>,
    /// |online cost − C*| with C* the reference cost at the finest Δt of this p.
    pub cost_error: Option<f64>,
    pub cost_order: Option<f64>,
    pub a_error: Option<f64>,
    pub a_error_order: Option<f64>,
    pub message: Option<String>,
    /// Round in which a failed cell stopped, when known.
    pub failed_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub schema_version: &'static str,
    pub block_layout: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn succeeded(&self) -> usize {
        self.rows.iter().filter(|r| r.status == CellStatus::Ok).count()
    }

    pub fn rows_for(&self, p: usize) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.p == p)
    }
}

/// Spec for one sweep cell: `base` with Δt, p, S and σ replaced.
pub fn cell_spec(base: &ProblemSpec, dt: f64, p: usize, options: &SweepOptions) -> ProblemSpec {
    ProblemSpec {
        dt,
        scheme_order: p,
        steps_per_round: options.steps_per_round.unwrap_or_else(|| default_steps_per_round(p)),
        noise_sigma: options.sigma.unwrap_or_else(|| default_noise_sigma(dt, p)),
        ..base.clone()
    }
}

struct CellOutcome {
    online_cost: f64,
    reference_cost: f64,
    a_error: f64,
}

fn run_cell(spec: &ProblemSpec) -> Result<CellOutcome> {
    let v = spec.validate()?;
    let online = run_online(&v)?;
    let reference = run_reference(&v)?;
    Ok(CellOutcome {
        online_cost: reported_cost(online.objective),
        reference_cost: reported_cost(reference.objective),
        a_error: a_error(online.final_belief.mean_matrix(), v.a_true())?,
    })
}

/// Runs every (p, Δt) cell. `dt_list` must be strictly decreasing so that
/// orders are taken between successive refinements. Failed cells are kept
/// and flagged; the sweep itself only fails on malformed lists.
pub fn run_sweep(base: &ProblemSpec, dt_list: &[f64], p_list: &[usize], options: SweepOptions) -> Result<SweepResult> {
    if dt_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LqrError::field("dt_list", "Δt values must be strictly decreasing"));
    }
    if let Some(bad) = dt_list.iter().find(|dt| !(dt.is_finite() && **dt > 0.0)) {
        return Err(LqrError::field("dt_list", format!("Δt must be positive, got {bad}")));
    }
    let cells: Vec<(usize, f64)> = p_list
        .iter()
        .flat_map(|&p| dt_list.iter().map(move |&dt| (p, dt)))
        .collect();
    let specs: Vec<ProblemSpec> = cells
        .iter()
        .map(|&(p, dt)| cell_spec(base, dt, p, &options))
        .collect();
    let outcomes: Vec<Result<CellOutcome>> = if options.parallel {
        specs.par_iter().map(run_cell).collect()
    } else {
        specs.iter().map(run_cell).collect()
    };

    let mut rows: Vec<SweepRow> = specs
        .iter()
        .zip(outcomes)
        .map(|(spec, outcome)| {
            let mut row = SweepRow {
                dt: spec.dt,
                p: spec.scheme_order,
                steps_per_round: spec.steps_per_round,
                sigma: spec.noise_sigma,
                status: CellStatus::Ok,
                online_cost: None,
                reference_cost: None,
                cost_error: None,
                cost_order: None,
                a_error: None,
                a_error_order: None,
                message: None,
                failed_round: None,
            };
            match outcome {
                Ok(c) => {
                    row.online_cost = Some(c.online_cost);
                    row.reference_cost = Some(c.reference_cost);
                    row.a_error = Some(c.a_error);
                }
                Err(e) => {
                    row.status = CellStatus::Failed;
                    row.failed_round = e.round();
                    row.message = Some(e.to_string());
                }
            }
            row
        })
        .collect();

    for &p in p_list {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].p == p).collect();
        let c_star = idx.iter().rev().find_map(|&i| rows[i].reference_cost);
        for &i in &idx {
            if let (Some(cost), Some(c_star)) = (rows[i].online_cost, c_star) {
                rows[i].cost_error = Some((cost - c_star).abs());
            }
        }
        for w in idx.windows(2) {
            let (coarse, fine) = (&rows[w[0]], &rows[w[1]]);
            let order = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => convergence_order(a, b, coarse.dt, fine.dt).ok(),
                _ => None,
            };
            let cost_order = order(coarse.cost_error, fine.cost_error);
            let a_order = order(coarse.a_error, fine.a_error);
            rows[w[1]].cost_order = cost_order;
            rows[w[1]].a_error_order = a_order;
        }
    }
    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        block_layout: BLOCK_LAYOUT,
        rows,
    })
}

/// 17 significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Columns: side, t, x_1..x_n, u_1..u_m. The control on the last node is empty.
pub fn write_trajectories_csv<W: Write>(out: W, sides: &[(&str, &Trajectory)]) -> Result<()> {
    let io = |e: csv::Error| LqrError::field("output", e.to_string());
    let (n, m) = sides
        .first()
        .map(|(_, t)| (t.states[0].len(), t.controls.first().map_or(0, |u| u.len())))
        .unwrap_or((0, 0));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["side".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    w.write_record(&header).map_err(io)?;
    for (side, traj) in sides {
        for (k, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
            let mut record = vec![side.to_string(), fmt_num(*t)];
            record.extend(x.iter().map(|v| fmt_num(*v)));
            match traj.controls.get(k) {
                Some(u) => record.extend(u.iter().map(|v| fmt_num(*v))),
                None => record.extend(std::iter::repeat_n(String::new(), m)),
            }
            w.write_record(&record).map_err(io)?;
        }
    }
    w.flush().map_err(|e| LqrError::field("output", e.to_string()))?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(out: W, sweep: &SweepResult) -> Result<()> {
    let io = |e: csv::Error| LqrError::field("output", e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dt",
        "p",
        "steps_per_round",
        "sigma",
        "status",
        "online_cost",
        "reference_cost",
        "cost_error",
        "cost_order",
        "a_error",
        "a_error_order",
        "message",
    ])
    .map_err(io)?;
    for r in &sweep.rows {
        let status = match r.status {
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
        };
        w.write_record([
            fmt_num(r.dt),
            r.p.to_string(),
            r.steps_per_round.to_string(),
            fmt_num(r.sigma),
            status.to_string(),
            fmt_opt(r.online_cost),
            fmt_opt(r.reference_cost),
            fmt_opt(r.cost_error),
            fmt_opt(r.cost_order),
            fmt_opt(r.a_error),
            fmt_opt(r.a_error_order),
            r.message.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| LqrError::field("output", e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::dmatrix;

    #[test]
    fn error_norm() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.0];
        assert_eq!(a_error(&a, &a).unwrap(), 0.0);
        let b = &a + dmatrix![0.1, 0.0; 0.0, 0.0];
        assert!((a_error(&b, &a).unwrap() - 0.1).abs() < 1e-15);
        assert!(a_error(&DMatrix::zeros(3, 3), &a).is_err());
    }

    #[test]
    fn orders_from_tables() {
        let o = convergence_order(0.0063, 0.0032, 0.1, 0.05).unwrap();
        assert!((o - 0.98).abs() < 0.005, "{o}");
        let o = convergence_order(0.087, 0.045, 0.05, 0.025).unwrap();
        assert!((o - 0.95).abs() < 0.005, "{o}");
        assert_eq!(convergence_order(0.5, 0.5, 0.1, 0.05).unwrap(), 0.0);
        assert!(convergence_order(0.0, 0.5, 0.1, 0.05).is_err());
        assert!(convergence_order(-1.0, 0.5, 0.1, 0.05).is_err());
    }

    #[test]
    fn empty_sweep() {
        let r = run_sweep(&fixtures::test1(0.1, 1), &[], &[1], SweepOptions::default()).unwrap();
        assert!(r.rows.is_empty());
    }

    #[test]
    fn increasing_dt_rejected() {
        assert!(run_sweep(&fixtures::test1(0.1, 1), &[0.05, 0.1], &[1], SweepOptions::default()).is_err());
    }

    #[test]
    fn failed_cell_is_flagged_and_rest_kept() {
        // Δt = 0.3 does not divide T = 5.
        let r = run_sweep(&fixtures::test1(0.1, 1), &[0.3, 0.1], &[1], SweepOptions::default()).unwrap();
        assert_eq!(r.rows[0].status, CellStatus::Failed);
        assert!(r.rows[0].message.as_deref().unwrap().contains("T/Δt not integer"));
        assert_eq!(r.rows[1].status, CellStatus::Ok);
        assert_eq!(r.succeeded(), 1);
        assert!(r.rows[1].cost_order.is_none());
    }

    #[test]
    fn parallel_matches_sequential() {
        let dts = [0.1, 0.05];
        let seq = run_sweep(&fixtures::test1(0.1, 1), &dts, &[1, 2], SweepOptions::default()).unwrap();
        let par = run_sweep(
            &fixtures::test1(0.1, 1),
            &dts,
            &[1, 2],
            SweepOptions { parallel: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn online_never_beats_reference_on_test1() {
        let r = run_sweep(&fixtures::test1(0.1, 1), &[0.1, 0.05, 0.025], &[1], SweepOptions::default()).unwrap();
        for row in &r.rows {
            assert!(row.online_cost.unwrap() >= row.reference_cost.unwrap() - 1e-9, "{row:?}");
        }
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let v = fixtures::test1(0.5, 1).validate().unwrap();
        let outcome = run_pair(&v, RunConfig::from_spec(&v.to_spec())).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &[("online", &outcome.online.trajectory)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "side,t,x_1,x_2,u_1");
        let first = lines.next().unwrap();
        assert!(first.starts_with("online,0.0000000000000000e0,"), "{first}");
        assert_eq!(text.lines().count(), 1 + 11);
        assert!(text.lines().last().unwrap().ends_with(','));
    }
}
