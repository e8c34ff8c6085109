//! Analytic-oracle checks runnable from a release binary.

use nalgebra::{dmatrix, dvector, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixtures;
use crate::linalg;
use crate::plant::{step, PlantState};
use crate::problem::ProblemSpec;
use crate::regression::{build_stencils, make_prior, PriorOverrides, RegressionBatch, StencilTable};
use crate::riccati::{solve_backward_with, RiccatiOptions};

/// Deliberate defects, used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Mutation {
    /// Added to the first interior weight of every stencil.
    pub stencil_perturbation: f64,
    /// Integrate the Riccati equation with a one-sided drift and no symmetrization.
    pub asymmetric_riccati: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: value <= tol,
        detail: format!("deviation {value:.3e} (tolerance {tol:.0e})"),
    }
}

fn riccati_options(mutation: &Mutation) -> RiccatiOptions {
    RiccatiOptions {
        symmetrize: !mutation.asymmetric_riccati,
        one_sided_drift: mutation.asymmetric_riccati,
        ..RiccatiOptions::default()
    }
}

fn riccati_tanh(mutation: &Mutation) -> CheckOutcome {
    let spec = ProblemSpec::with_defaults(
        dmatrix![0.0],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![0.0],
        1.0,
        dvector![1.0],
        0.01,
        1,
    );
    let value = spec
        .validate()
        .and_then(|v| solve_backward_with(&dmatrix![0.0], v.known(), 0, riccati_options(mutation)))
        .map(|sol| (sol.p_matrices[0][(0, 0)] - 1f64.tanh()).abs())
        .unwrap_or(f64::INFINITY);
    check("riccati_tanh", value, 1e-8)
}

fn riccati_symmetry(mutation: &Mutation) -> CheckOutcome {
    let v = fixtures::test2().validate().expect("bundled fixture is valid");
    let value = solve_backward_with(v.a_true(), v.known(), 0, riccati_options(mutation))
        .map(|sol| sol.p_matrices.iter().map(linalg::asymmetry).fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY);
    check("riccati_symmetry", value, linalg::SYMMETRY_TOL)
}

fn plant_rotation() -> CheckOutcome {
    let (a, b) = (dmatrix![0.0, 1.0; -1.0, 0.0], dmatrix![0.0; 1.0]);
    let h = std::f64::consts::FRAC_PI_2 / 50.0;
    let mut s = Ok(PlantState { t: 0.0, x: dvector![0.0, 1.0] });
    for _ in 0..50 {
        s = s.and_then(|s| step(&s, &dvector![0.0], h, &a, &b));
    }
    let value = s.map(|s| (s.x - dvector![1.0, 0.0]).amax()).unwrap_or(f64::INFINITY);
    check("plant_rotation", value, 1e-10)
}

fn plant_exponential() -> CheckOutcome {
    let mut s = Ok(PlantState { t: 0.0, x: dvector![0.0] });
    for _ in 0..10 {
        s = s.and_then(|s| step(&s, &dvector![1.0], 0.1, &dmatrix![1.0], &dmatrix![1.0]));
    }
    let value = s
        .map(|s| (s.x[0] - (std::f64::consts::E - 1.0)).abs())
        .unwrap_or(f64::INFINITY);
    check("plant_exponential", value, 1e-10)
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, cols: usize) -> RegressionBatch {
    RegressionBatch {
        regressors: DMatrix::from_fn(n, cols, |_, _| rng.random_range(-2.0..2.0)),
        targets: DMatrix::from_fn(n, cols, |_, _| rng.random_range(-2.0..2.0)),
    }
}

/// Worst deviations over seeded random instances: (ridge, sequential vs batch, contraction).
fn regression_deviations(instances: usize) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut ridge, mut seq, mut contraction) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let n = rng.random_range(1..=4);
        let sigma = rng.random_range(0.1..2.0);
        let prior = make_prior(n, 2, &PriorOverrides::default(), sigma).expect("default prior");
        let (b1, b2) = (random_batch(&mut rng, n, 4), random_batch(&mut rng, n, 3));
        let (Ok(post), Ok(all)) = (prior.bayes_update(&b1), prior.bayes_update(&b1.concat(&b2))) else {
            return (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        };
        let Ok(twice) = post.bayes_update(&b2) else {
            return (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        };
        seq = seq
            .max((twice.mean_matrix() - all.mean_matrix()).amax())
            .max((twice.covariance() - all.covariance()).amax());
        contraction = contraction.max(-linalg::min_eigenvalue(&(prior.covariance() - post.covariance())));

        // Ridge normal equations with penalty σ²Σ₀⁻¹, solved by LU.
        let x = &b1.regressors;
        let penalty = prior.covariance().clone().try_inverse().expect("prior invertible") * (sigma * sigma);
        let lu = (x * x.transpose() + penalty).lu();
        for k in 0..n {
            let direct = lu.solve(&(x * b1.targets.row(k).transpose())).expect("ridge system solvable");
            ridge = ridge.max((post.row_mean(k) - direct).amax());
        }
    }
    (ridge, seq, contraction)
}

fn perturbed(table: StencilTable, eps: f64) -> StencilTable {
    if eps == 0.0 {
        return table;
    }
    let p = table.order();
    let weights = (0..p)
        .map(|k| {
            let mut w = table.weights(k).to_vec();
            w[1] += eps;
            w
        })
        .collect();
    StencilTable::from_weights(p, weights).expect("same shape")
}

fn stencil_exactness(mutation: &Mutation) -> CheckOutcome {
    let mut worst = 0.0f64;
    for p in [1, 2, 4] {
        let table = perturbed(build_stencils(p).expect("supported order"), mutation.stencil_perturbation);
        for dt in [0.1, 0.01] {
            worst = worst.max(table.moment_defect(dt));
        }
    }
    check("stencil_exactness", worst, 1e-10)
}

/// Runs every check and returns one outcome per property.
pub fn run_selftest(mutation: &Mutation) -> Vec<CheckOutcome> {
    let (ridge, seq, contraction) = regression_deviations(100);
    vec![
        riccati_tanh(mutation),
        riccati_symmetry(mutation),
        plant_rotation(),
        plant_exponential(),
        check("ridge_equivalence", ridge, 1e-10),
        check("sequential_batch", seq, 1e-10),
        check("covariance_contraction", contraction, 1e-10),
        stencil_exactness(mutation),
    ]
}
