use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use online_lqr::harness::{cell_spec, reported_cost, run_sweep, CellStatus, SweepOptions};
use online_lqr::{fixtures, linalg, run_online, run_reference, ProblemSpec};

const TABLE_DTS: [f64; 3] = [0.1, 0.05, 0.025];

fn known_model(mut spec: ProblemSpec) -> ProblemSpec {
    spec.prior_mean_rows = Some(spec.a_true.clone());
    spec.prior_cov = DMatrix::identity(spec.state_dim(), spec.state_dim()) * 1e-12;
    spec
}

#[test]
fn online_costs_fall_toward_reference_limit() {
    let r = run_sweep(&fixtures::test1(0.1, 1), &TABLE_DTS, &[1], SweepOptions::default()).unwrap();
    let costs: Vec<f64> = r.rows.iter().map(|row| row.online_cost.unwrap()).collect();
    assert!(costs.windows(2).all(|w| w[1] < w[0]), "{costs:?}");
    for row in &r.rows[1..] {
        let order = row.cost_order.unwrap();
        assert!((0.7..1.4).contains(&order), "{order}");
    }
}

#[test]
fn first_order_cells_never_beat_reference() {
    let r = run_sweep(&fixtures::test1(0.1, 1), &[0.1, 0.05, 0.025, 0.01], &[1], SweepOptions::default()).unwrap();
    for row in &r.rows {
        assert!(row.online_cost.unwrap() >= row.reference_cost.unwrap() - 1e-9, "{row:?}");
    }
}

/// With the control held over 4 steps the continuous-time gain is far from
/// optimal for the sampled system, and the learned controller can do better.
#[test]
fn held_reference_gain_is_not_sampled_data_optimal() {
    let v = cell_spec(&fixtures::test1(0.1, 4), 0.1, 4, &SweepOptions::default()).validate().unwrap();
    let online = run_online(&v).unwrap().objective;
    let reference = run_reference(&v).unwrap().objective;
    assert!(online < reference, "{online} {reference}");
}

#[test]
fn known_model_prior_dominates_default_prior() {
    for dt in TABLE_DTS {
        let default = run_online(&fixtures::test1(dt, 1).validate().unwrap()).unwrap().objective;
        let v = known_model(fixtures::test1(dt, 1)).validate().unwrap();
        let informed = run_online(&v).unwrap().objective;
        let reference = run_reference(&v).unwrap().objective;
        assert!(informed <= default, "Δt={dt}: {informed} > {default}");
        assert!((reported_cost(informed) - reported_cost(reference)).abs() < 1e-4);
    }
}

#[test]
fn higher_order_error_drops_fast() {
    let r = run_sweep(&fixtures::test1(0.1, 4), &[0.1, 0.05], &[4], SweepOptions::default()).unwrap();
    assert!(r.rows[1].a_error_order.unwrap() >= 4.0, "{:?}", r.rows[1]);
}

#[test]
fn single_cell_sweep_matches_run() {
    let spec = fixtures::test1(0.05, 2);
    let r = run_sweep(&spec, &[0.05], &[2], SweepOptions::default()).unwrap();
    let run = run_online(&spec.validate().unwrap()).unwrap();
    assert_eq!(r.rows[0].online_cost, Some(reported_cost(run.objective)));
}

/// Prior mean −200·I with a tight covariance: explicit RK4 on the backward
/// Riccati equation is unstable at Δt/10 = 0.01 but not at 0.005.
#[test]
fn adversarial_prior_fails_one_cell_only() {
    let mut spec = fixtures::test1(0.1, 1);
    spec.prior_mean_rows = Some(DMatrix::identity(2, 2) * -200.0);
    spec.prior_cov = DMatrix::identity(2, 2) * 1e-12;
    let r = run_sweep(&spec, &[0.1, 0.05], &[1], SweepOptions::default()).unwrap();
    assert_eq!(r.rows[0].status, CellStatus::Failed);
    assert_eq!(r.rows[0].failed_round, Some(1));
    assert!(r.rows[0].message.as_deref().unwrap().contains("Riccati"));
    assert_eq!(r.rows[1].status, CellStatus::Ok);
}

#[test]
fn hidden_matrix_only_reaches_controller_through_observations() {
    let v = fixtures::test2().validate().unwrap();
    let other = v.with_a_true(DMatrix::from_fn(4, 4, |i, j| if i == j { -1.0 } else { 0.1 })).unwrap();
    let a = run_online(&v).unwrap();
    let b = run_online(&other).unwrap();
    // Planned before anything was observed.
    assert_eq!(a.rounds[0].gains, b.rounds[0].gains);
    assert_eq!(a.rounds[0].model_matrix, b.rounds[0].model_matrix);
    assert_ne!(a.rounds[1].model_matrix, b.rounds[1].model_matrix);
}

fn random_spec(entries: &[f64], b: &[f64], dt_index: usize, p_index: usize) -> ProblemSpec {
    let dt = [0.1, 0.05][dt_index];
    let p = [1, 2, 4][p_index];
    let mut spec = fixtures::test1(dt, p);
    spec.a_true = DMatrix::from_row_slice(2, 2, entries);
    spec.b = DMatrix::from_column_slice(2, 1, b);
    spec.horizon = 2.0;
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rounds_cover_horizon_and_belief_contracts(entries in proptest::collection::vec(-1.0f64..1.0, 4),
                                                 b in proptest::collection::vec(0.2f64..1.0, 2),
                                                 dt_index in 0usize..2, p_index in 0usize..3) {
        let spec = random_spec(&entries, &b, dt_index, p_index);
        let v = spec.validate().unwrap();
        let run = run_online(&v).unwrap();
        let grid = v.grid();
        prop_assert_eq!(run.rounds.len(), grid.steps().div_ceil(grid.steps_per_round()));
        prop_assert_eq!(run.trajectory.controls.len(), grid.steps());
        let mut previous = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        for r in &run.rounds {
            let cov = linalg::from_rows(&r.belief.covariance).unwrap();
            prop_assert!(cov.clone().cholesky().is_some());
            prop_assert!(linalg::min_eigenvalue(&(&previous - &cov)) >= -1e-10);
            prop_assert_eq!(r.gains.len(), r.controls.len());
            previous = cov;
        }
        prop_assert!(run.objective.is_finite() && run.objective >= 0.0);
    }

    #[test]
    fn runs_are_reproducible(entries in proptest::collection::vec(-1.0f64..1.0, 4),
                             b in proptest::collection::vec(0.2f64..1.0, 2)) {
        let v = random_spec(&entries, &b, 0, 1).validate().unwrap();
        let a = run_online(&v).unwrap();
        let c = run_online(&v).unwrap();
        prop_assert_eq!(a.objective.to_bits(), c.objective.to_bits());
        prop_assert_eq!(a.rounds, c.rounds);
    }

    #[test]
    fn known_model_limit_tracks_reference(entries in proptest::collection::vec(-1.0f64..1.0, 4),
                                          b in proptest::collection::vec(0.2f64..1.0, 2)) {
        let v = known_model(random_spec(&entries, &b, 1, 0)).validate().unwrap();
        let online = run_online(&v).unwrap();
        let reference = run_reference(&v).unwrap();
        prop_assert!((online.objective - reference.objective).abs() < 1e-6 * (1.0 + reference.objective));
        let x0: &DVector<f64> = &online.trajectory.states[0];
        prop_assert_eq!(x0, &reference.trajectory.states[0]);
    }
}
