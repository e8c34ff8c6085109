//! Backward matrix Riccati equation and the feedback gains it induces.
//!
//! −Ṗ = AᵀP + PA − PBR⁻¹BᵀP + Q on [t_start, T], P(T) = Q_f, integrated with
//! classical RK4 on substeps of Δt/10 and sampled at every grid node.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LqrError, Result};
use crate::linalg;
use crate::problem::KnownProblem;

/// ‖P‖ above this is treated as finite escape.
pub const BLOW_UP_NORM: f64 = 1e12;

pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    /// RK4 substeps per grid step.
    pub substeps: usize,
    /// Project onto symmetric matrices after every substep.
    pub symmetrize: bool,
    /// Evaluate the drift as 2AᵀP instead of AᵀP + PA. Same symmetric part, so only
    /// the symmetrization keeps the iterate symmetric. Used to check the checks.
    pub one_sided_drift: bool,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            substeps: DEFAULT_SUBSTEPS,
            symmetrize: true,
            one_sided_drift: false,
        }
    }
}

/// R⁻¹Bᵀ via a Cholesky solve, plus B R⁻¹ Bᵀ.
#[derive(Debug, Clone)]
struct InputWeights {
    r_inv_bt: DMatrix<f64>,
    b_r_inv_bt: DMatrix<f64>,
}

impl InputWeights {
    fn new(b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let diagonal = (0..r.nrows()).all(|i| (0..r.ncols()).all(|j| i == j || r[(i, j)] == 0.0));
        let r_inv_bt = if diagonal {
            let mut out = b.transpose();
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row /= r[(i, i)];
            }
            out
        } else {
            let chol = r
                .clone()
                .cholesky()
                .ok_or(LqrError::NotPositiveDefinite { what: "R" })?;
            chol.solve(&b.transpose())
        };
        let b_r_inv_bt = b * &r_inv_bt;
        Ok(InputWeights {
            r_inv_bt,
            b_r_inv_bt,
        })
    }
}

/// P sampled at grid nodes `start_node..=N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    pub start_node: usize,
    pub dt: f64,
    pub p_matrices: Vec<DMatrix<f64>>,
}

impl RiccatiSolution {
    pub fn t_start(&self) -> f64 {
        self.start_node as f64 * self.dt
    }

    pub fn end_node(&self) -> usize {
        self.start_node + self.p_matrices.len() - 1
    }

    pub fn at_node(&self, node: usize) -> Result<&DMatrix<f64>> {
        node.checked_sub(self.start_node)
            .and_then(|i| self.p_matrices.get(i))
            .ok_or(LqrError::OffGrid {
                what: "Riccati sample",
                t: node as f64 * self.dt,
            })
    }

    pub fn node_of(&self, t: f64) -> Result<usize> {
        let ratio = t / self.dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 || k < self.start_node as f64 || k > self.end_node() as f64 {
            return Err(LqrError::OffGrid { what: "gain time", t });
        }
        Ok(k as usize)
    }
}

/// K(t_k) = R⁻¹BᵀP(t_k) at the same nodes as the Riccati samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackGain {
    pub start_node: usize,
    pub k_matrices: Vec<DMatrix<f64>>,
}

impl FeedbackGain {
    pub fn at_node(&self, node: usize) -> Option<&DMatrix<f64>> {
        node.checked_sub(self.start_node)
            .and_then(|i| self.k_matrices.get(i))
    }

    /// u = −K x.
    pub fn control(&self, node: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.at_node(node).map(|k| -(k * x))
    }
}

pub fn solve_backward(
    a_model: &DMatrix<f64>,
    problem: &KnownProblem,
    start_node: usize,
) -> Result<RiccatiSolution> {
    solve_backward_with(a_model, problem, start_node, RiccatiOptions::default())
}

pub fn solve_backward_with(
    a_model: &DMatrix<f64>,
    problem: &KnownProblem,
    start_node: usize,
    opts: RiccatiOptions,
) -> Result<RiccatiSolution> {
    let n = problem.state_dim();
    if a_model.nrows() != n || a_model.ncols() != n {
        return Err(LqrError::dims(
            "model matrix",
            format!("{n}x{n}"),
            format!("{}x{}", a_model.nrows(), a_model.ncols()),
        ));
    }
    let grid = &problem.grid;
    let end = grid.steps();
    if start_node >= end {
        return Err(LqrError::OffGrid {
            what: "Riccati start",
            t: grid.time(start_node),
        });
    }
    if !linalg::all_finite(a_model) {
        return Err(LqrError::NonFinite { what: "model matrix" });
    }
    let weights = InputWeights::new(&problem.b, &problem.r)?;
    let a_t = a_model.transpose();
    let rhs = |p: &DMatrix<f64>| -> DMatrix<f64> {
        let drift = if opts.one_sided_drift {
            &a_t * p * 2.0
        } else {
            &a_t * p + p * a_model
        };
        drift - p * &weights.b_r_inv_bt * p + &problem.q
    };

    let substeps = opts.substeps.max(1);
    let h = grid.dt() / substeps as f64;
    let mut p = problem.q_f.clone();
    let mut samples = Vec::with_capacity(end - start_node + 1);
    samples.push(p.clone());
    for node in (start_node..end).rev() {
        for s in 0..substeps {
            // Backward in time: dP/dτ = rhs(P) with τ = T − t.
            let k1 = rhs(&p);
            let k2 = rhs(&(&p + &k1 * (h / 2.0)));
            let k3 = rhs(&(&p + &k2 * (h / 2.0)));
            let k4 = rhs(&(&p + &k3 * h));
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if opts.symmetrize {
                p = linalg::symmetrize(&p);
            }
            let norm = p.norm();
            if !norm.is_finite() || norm > BLOW_UP_NORM {
                let t = grid.time(node + 1) - (s + 1) as f64 * h;
                return Err(LqrError::RiccatiBlowUp { t, norm });
            }
        }
        samples.push(p.clone());
    }
    samples.reverse();
    Ok(RiccatiSolution {
        start_node,
        dt: grid.dt(),
        p_matrices: samples,
    })
}

/// K = R⁻¹BᵀP at every sample.
pub fn gains(sol: &RiccatiSolution, problem: &KnownProblem) -> Result<FeedbackGain> {
    let weights = InputWeights::new(&problem.b, &problem.r)?;
    Ok(FeedbackGain {
        start_node: sol.start_node,
        k_matrices: sol
            .p_matrices
            .iter()
            .map(|p| &weights.r_inv_bt * p)
            .collect(),
    })
}

/// K(t) = R⁻¹BᵀP(t) at a grid time.
pub fn gain_at(sol: &RiccatiSolution, problem: &KnownProblem, t: f64) -> Result<DMatrix<f64>> {
    let node = sol.node_of(t)?;
    let weights = InputWeights::new(&problem.b, &problem.r)?;
    Ok(&weights.r_inv_bt * sol.at_node(node)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::problem::ProblemSpec;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn scalar_problem(dt: f64) -> KnownProblem {
        let spec = ProblemSpec::with_defaults(
            dmatrix![0.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
            1.0,
            dvector![1.0],
            dt,
            1,
        );
        spec.validate().unwrap().known().clone()
    }

    #[test]
    fn zero_weights_give_zero_solution() {
        let mut spec = fixtures::test1(0.1, 1);
        spec.q = DMatrix::zeros(2, 2);
        let v = spec.validate().unwrap();
        let sol = solve_backward(&dmatrix![3.0, -1.0; 2.0, 0.5], v.known(), 0).unwrap();
        assert!(sol.p_matrices.iter().all(|p| p.amax() == 0.0));
        let k = gains(&sol, v.known()).unwrap();
        assert!(k.k_matrices.iter().all(|k| k.amax() == 0.0));
    }

    #[test]
    fn scalar_tanh() {
        let problem = scalar_problem(0.01);
        let sol = solve_backward(&dmatrix![0.0], &problem, 0).unwrap();
        assert!((sol.p_matrices[0][(0, 0)] - 1f64.tanh()).abs() < 1e-8);
        // b = r = 1, so the gain equals P.
        let k = gain_at(&sol, &problem, 0.0).unwrap();
        assert!((k[(0, 0)] - 1f64.tanh()).abs() < 1e-8);
        for (i, p) in sol.p_matrices.iter().enumerate() {
            let t = i as f64 * 0.01;
            assert!((p[(0, 0)] - (1.0 - t).tanh()).abs() < 1e-8);
        }
    }

    #[test]
    fn terminal_gain_is_zero_for_test1() {
        let v = fixtures::test1(0.1, 1).validate().unwrap();
        let sol = solve_backward(v.a_true(), v.known(), 0).unwrap();
        assert_eq!(sol.p_matrices.last().unwrap(), &v.known().q_f);
        assert_eq!(gain_at(&sol, v.known(), 5.0).unwrap().amax(), 0.0);
    }

    #[test]
    fn partial_solve_samples_tail() {
        let v = fixtures::test1(0.1, 1).validate().unwrap();
        let full = solve_backward(v.a_true(), v.known(), 0).unwrap();
        let tail = solve_backward(v.a_true(), v.known(), 20).unwrap();
        assert_eq!(tail.p_matrices.len(), 31);
        assert_eq!(tail.at_node(20).unwrap(), full.at_node(20).unwrap());
        assert!(tail.at_node(19).is_err());
        assert!(gain_at(&tail, v.known(), 0.15 + 2.0).is_err());
    }

    #[test]
    fn start_must_precede_horizon() {
        let v = fixtures::test1(0.1, 1).validate().unwrap();
        assert!(solve_backward(v.a_true(), v.known(), 50).is_err());
    }

    /// Fine RK4 on the same equation with substep 1e-5, written out longhand.
    fn reference_p0(a: &DMatrix<f64>, problem: &KnownProblem, h: f64) -> DMatrix<f64> {
        let r_inv = problem.r.clone().try_inverse().unwrap();
        let s = &problem.b * r_inv * problem.b.transpose();
        let f = |p: &DMatrix<f64>| a.transpose() * p + p * a - p * &s * p + &problem.q;
        let steps = (problem.horizon / h).round() as usize;
        let mut p = problem.q_f.clone();
        for _ in 0..steps {
            let k1 = f(&p);
            let k2 = f(&(&p + &k1 * (h / 2.0)));
            let k3 = f(&(&p + &k2 * (h / 2.0)));
            let k4 = f(&(&p + &k3 * h));
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        p
    }

    #[test]
    fn test1_matches_fine_reference() {
        let v = fixtures::test1(0.1, 1).validate().unwrap();
        let sol = solve_backward(v.a_true(), v.known(), 0).unwrap();
        let reference = reference_p0(v.a_true(), v.known(), 1e-5);
        assert!((&sol.p_matrices[0] - reference).amax() < 1e-7);
    }

    #[test]
    fn substep_refinement_is_fourth_order() {
        let problem = scalar_problem(0.1);
        let exact = 1f64.tanh();
        let err = |substeps| {
            let opts = RiccatiOptions { substeps, ..Default::default() };
            let sol = solve_backward_with(&dmatrix![0.0], &problem, 0, opts).unwrap();
            (sol.p_matrices[0][(0, 0)] - exact).abs()
        };
        let (coarse, fine) = (err(1), err(2));
        assert!((coarse / fine).log2() >= 3.5, "{coarse} {fine}");
    }

    #[test]
    fn independent_of_initial_state() {
        let mut spec = fixtures::test1(0.05, 1);
        let first = solve_backward(&dmatrix![0.3, 1.0; -2.0, 0.1], spec.validate().unwrap().known(), 0).unwrap();
        spec.x0 = dvector![5.0, -3.0];
        let second = solve_backward(&dmatrix![0.3, 1.0; -2.0, 0.1], spec.validate().unwrap().known(), 0).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn blow_up_reported() {
        let v = fixtures::test1(0.1, 1).validate().unwrap();
        let err = solve_backward(&(DMatrix::identity(2, 2) * 1e6), v.known(), 0).unwrap_err();
        assert!(matches!(err, LqrError::RiccatiBlowUp { .. }), "{err}");
    }

    #[test]
    fn one_sided_drift_breaks_symmetry_without_projection() {
        let v = fixtures::test1(0.1, 1).validate().unwrap();
        let opts = RiccatiOptions { symmetrize: false, one_sided_drift: true, ..Default::default() };
        let sol = solve_backward_with(v.a_true(), v.known(), 0, opts).unwrap();
        assert!(sol.p_matrices.iter().any(|p| linalg::asymmetry(p) > 1e-10));
    }

    fn random_instance(entries: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(3, 3, &entries[0..9]);
        let l1 = DMatrix::from_row_slice(3, 3, &entries[9..18]);
        let l2 = DMatrix::from_row_slice(3, 3, &entries[18..27]);
        (a, &l1 * l1.transpose(), &l2 * l2.transpose())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn symmetric_psd_and_monotone_in_q(entries in proptest::collection::vec(-1.0f64..1.0, 27)) {
            let (a, q1, extra) = random_instance(&entries);
            let q2 = &q1 + extra;
            let base = ProblemSpec {
                b: dmatrix![1.0, 0.0; 0.0, 0.0; 0.5, 1.0],
                r: dmatrix![1.0, 0.2; 0.2, 0.5],
                q_f: DMatrix::identity(3, 3) * 0.5,
                ..ProblemSpec::with_defaults(
                    a.clone(), DMatrix::zeros(3, 2), q1.clone(), DMatrix::identity(2, 2),
                    DMatrix::zeros(3, 3), 2.0, DVector::zeros(3), 0.1, 1)
            };
            let spec2 = ProblemSpec { q: q2, ..base.clone() };
            let k1 = base.validate().unwrap().known().clone();
            let k2 = spec2.validate().unwrap().known().clone();
            let s1 = solve_backward(&a, &k1, 0).unwrap();
            let s2 = solve_backward(&a, &k2, 0).unwrap();
            for (p1, p2) in s1.p_matrices.iter().zip(&s2.p_matrices) {
                prop_assert!(linalg::asymmetry(p1) <= 1e-10);
                prop_assert!(linalg::min_eigenvalue(p1) >= -1e-8);
                prop_assert!(linalg::min_eigenvalue(&(p2 - p1)) >= -1e-8);
            }
        }
    }
}
