//! The round loop: plan with the current mean matrix, act on the plant, learn
//! from what was observed.
//!
//! The controller only ever sees a [`KnownProblem`] and the observations the
//! [`Plant`] hands out. The hidden state matrix never reaches this module
//! except inside the plant and in [`run_reference`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LqrError, Result};
use crate::linalg;
use crate::plant::{rollout, Plant};
use crate::problem::{cost_of, KnownProblem, Trajectory, ValidatedSpec};
use crate::regression::{build_stencils, extract_observations, BeliefSnapshot, MatrixBelief, StencilTable};
use crate::riccati::{gains, solve_backward};

/// What happened in round i (numbered from 1), covering [t_{i−1}, t_i].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub start_node: usize,
    /// Ā_{i−1}, the model used to plan this round.
    pub model_matrix: Vec<Vec<f64>>,
    /// K(t_i^j) for j = 0..S−1.
    pub gains: Vec<Vec<Vec<f64>>>,
    /// π_i, after the update.
    pub belief: BeliefSnapshot,
    /// Observed states at t_i^0..t_i^S.
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    /// True states of the plant.
    pub trajectory: Trajectory,
    pub rounds: Vec<RoundRecord>,
    pub final_belief: MatrixBelief,
    /// J with the ½ factor.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub trajectory: Trajectory,
    pub objective: f64,
}

pub struct OnlineController {
    problem: KnownProblem,
    stencils: StencilTable,
    belief: MatrixBelief,
}

impl OnlineController {
    pub fn new(problem: KnownProblem) -> Result<Self> {
        let belief = problem.initial_belief()?;
        Self::with_belief(problem, belief)
    }

    pub fn with_belief(problem: KnownProblem, belief: MatrixBelief) -> Result<Self> {
        if belief.dim() != problem.state_dim() {
            return Err(LqrError::dims("belief", problem.state_dim(), belief.dim()));
        }
        let stencils = build_stencils(problem.scheme_order)?;
        Ok(OnlineController {
            problem,
            stencils,
            belief,
        })
    }

    pub fn belief(&self) -> &MatrixBelief {
        &self.belief
    }

    /// Plays one round starting at the plant's current node.
    pub fn play_round(&mut self, round: usize, plant: &mut Plant) -> Result<RoundRecord> {
        let grid = self.problem.grid;
        let start = grid.round_node(round, 0);
        if plant.node() != start {
            return Err(LqrError::OffGrid {
                what: "round start",
                t: grid.time(plant.node()),
            });
        }
        let model = self.belief.mean_matrix().clone();
        let solution = solve_backward(&model, &self.problem, start)?;
        let feedback = gains(&solution, &self.problem)?;

        let s = grid.round_len(round);
        let mut states = Vec::with_capacity(s + 1);
        let mut controls: Vec<DVector<f64>> = Vec::with_capacity(s);
        states.push(plant.observe().clone());
        let mut held = None;
        for j in 0..s {
            let node = start + j;
            if grid.is_block_start(node) {
                let k = feedback.at_node(node).expect("gain sampled on every node of the round");
                held = Some(-(k * plant.observe()));
            }
            let u = held.clone().expect("rounds begin on a block start");
            plant.advance(&u)?;
            states.push(plant.observe().clone());
            controls.push(u);
        }

        let batch = extract_observations(&states, &controls, &self.problem.b, grid.dt(), &self.stencils)?;
        self.belief = self.belief.bayes_update(&batch)?;

        Ok(RoundRecord {
            round,
            start_node: start,
            model_matrix: linalg::to_rows(&model),
            gains: feedback.k_matrices[..s].iter().map(linalg::to_rows).collect(),
            belief: self.belief.snapshot(),
            states: states.iter().map(|x| x.iter().copied().collect()).collect(),
            controls: controls.iter().map(|u| u.iter().copied().collect()).collect(),
        })
    }

    /// All ⌈N/S⌉ rounds on a single pass of the plant.
    pub fn run(&mut self, plant: &mut Plant) -> Result<Vec<RoundRecord>> {
        (1..=self.problem.grid.rounds())
            .map(|i| self.play_round(i, plant).map_err(|e| e.in_round(i)))
            .collect()
    }
}

/// Identification and control on one simulated trajectory.
pub fn run_online(spec: &ValidatedSpec) -> Result<OnlineRun> {
    let controller = OnlineController::new(spec.known().clone())?;
    finish_online(spec, controller)
}

/// As [`run_online`], starting from an explicit prior.
pub fn run_online_with_belief(spec: &ValidatedSpec, prior: MatrixBelief) -> Result<OnlineRun> {
    let controller = OnlineController::with_belief(spec.known().clone(), prior)?;
    finish_online(spec, controller)
}

fn finish_online(spec: &ValidatedSpec, mut controller: OnlineController) -> Result<OnlineRun> {
    let mut plant = Plant::new(spec);
    let rounds = controller.run(&mut plant)?;
    let trajectory = plant.into_trajectory();
    let objective = cost_of(&trajectory, spec.known())?;
    Ok(OnlineRun {
        trajectory,
        rounds,
        final_belief: controller.belief,
        objective,
    })
}

/// The same actuation with the true matrix known from the start.
pub fn run_reference(spec: &ValidatedSpec) -> Result<ReferenceRun> {
    let known = spec.known();
    let solution = solve_backward(spec.a_true(), known, 0)?;
    let feedback = gains(&solution, known)?;
    let trajectory = rollout(spec, |node, x| {
        feedback
            .control(node, x)
            .expect("gain sampled on every node")
    })?;
    let objective = cost_of(&trajectory, known)?;
    Ok(ReferenceRun {
        trajectory,
        objective,
    })
}

/// Reference gains K(t_k) for every node, e.g. for plotting against the learned ones.
pub fn reference_gains(spec: &ValidatedSpec) -> Result<Vec<DMatrix<f64>>> {
    let known = spec.known();
    let solution = solve_backward(spec.a_true(), known, 0)?;
    Ok(gains(&solution, known)?.k_matrices)
}
