use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::grid::NdGrid;
use super::metrics::{fitness_score, metrics_from, FitnessMetrics};
use super::score::{score_derivatives, score_derivatives_numeric, ScoreEval};
use crate::error::{Error, Result};
use crate::geometry::{Pose6, Scan};
use crate::io::config::{DerivativeMode, RunConfig};
use crate::kdtree::PointIndex;

/// Slack allowed when checking that a step does not increase the objective.
const MONOTONE_SLACK: f64 = 1e-12;
const DAMPING_START: f64 = 1e-4;
const DAMPING_FACTOR: f64 = 10.0;
const MAX_DAMPING_INCREASES: usize = 10;

/// A reference cloud prepared for matching: the ND grid plus a
/// nearest-neighbour index for the fitness score.
#[derive(Debug, Clone)]
pub struct NdtTarget {
    grid: NdGrid,
    index: PointIndex,
}

impl NdtTarget {
    pub fn new(reference: &Scan, config: &RunConfig) -> Result<Self> {
        let grid = NdGrid::build(reference, config.ndt_resolution, config.min_points_per_voxel)?;
        Ok(Self {
            grid,
            index: PointIndex::new(reference.positions()),
        })
    }

    pub fn from_parts(grid: NdGrid, index: PointIndex) -> Self {
        Self { grid, index }
    }

    pub fn into_parts(self) -> (NdGrid, PointIndex) {
        (self.grid, self.index)
    }

    /// Adds reference points: the grid is updated in place and the points
    /// get their own nearest-neighbour tree.
    pub fn extend(&mut self, points: Vec<Vector3<f64>>) {
        self.grid.insert(points.iter().copied());
        self.index.push(points);
    }

    pub fn grid(&self) -> &NdGrid {
        &self.grid
    }

    pub fn index(&self) -> &PointIndex {
        &self.index
    }

    /// Fitness score and both transformation probabilities of `scan` at
    /// `pose`.
    pub fn fitness_metrics(&self, scan: &Scan, pose: &Pose6, config: &RunConfig) -> FitnessMetrics {
        let points = scan.positions();
        let e = super::score::score(&self.grid, &points, pose, config.neighborhood);
        metrics_from(
            fitness_score(&self.index, &points, pose, config.fitness_cap()),
            e,
            points.len(),
        )
    }
}

/// Outcome of one scan alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: Pose6,
    /// Newton steps taken.
    pub iterations: usize,
    pub converged: bool,
    pub fitness_score: f64,
    /// Fitness score divided by the number of scan points.
    pub tp_paper: f64,
    /// NDT score divided by the number of scan points.
    pub tp_score: f64,
    /// NDT score `E` at the final pose.
    pub score: f64,
    /// Objective `f = −E` before the first step and after every step.
    pub score_trace: Vec<f64>,
    pub scan_points: usize,
}

impl RegistrationResult {
    /// Per-point NDT score.
    pub fn transformation_probability(&self) -> f64 {
        self.tp_score
    }
}

/// Larger of the translation and rotation norms of a parameter update.
pub fn step_magnitude(step: &Vector6<f64>) -> f64 {
    let t = Vector3::new(step[0], step[1], step[2]).norm();
    let r = Vector3::new(step[3], step[4], step[5]).norm();
    t.max(r)
}

fn clamp_step(step: Vector6<f64>, config: &RunConfig) -> Vector6<f64> {
    let t = Vector3::new(step[0], step[1], step[2]).norm();
    let r = Vector3::new(step[3], step[4], step[5]).norm();
    let mut scale: f64 = 1.0;
    if t > config.max_step_translation {
        scale = scale.min(config.max_step_translation / t);
    }
    if r > config.max_step_rotation {
        scale = scale.min(config.max_step_rotation / r);
    }
    step * scale
}

fn apply_step(pose: &Pose6, step: &Vector6<f64>) -> Pose6 {
    let mut a = pose.to_array();
    for (v, s) in a.iter_mut().zip(step.iter()) {
        *v += s;
    }
    Pose6::from_array(a)
}

fn evaluate(target: &NdtTarget, points: &[Vector3<f64>], pose: &Pose6, config: &RunConfig) -> ScoreEval {
    match config.derivatives {
        DerivativeMode::Analytic => score_derivatives(&target.grid, points, pose, config.neighborhood),
        DerivativeMode::FiniteDifference => {
            score_derivatives_numeric(&target.grid, points, pose, config.neighborhood)
        }
    }
}

/// Newton optimization of `f(t) = −E(X, t)` from `initial`.
///
/// Each iteration solves `(H + λ·D) Δ = −g` with `D = diag(|H_ii|)`.
/// λ starts at zero; it is set to 1e-4 and then multiplied by ten whenever
/// the system is not positive definite or the step would increase `f`, and
/// reset after every accepted step. Steps are clamped to
/// `max_step_translation` / `max_step_rotation`. Iteration stops once a step
/// is shorter than `transformation_epsilon` or after `max_iterations`
/// steps.
///
/// A scan with no point inside a populated voxel, or a step that cannot be
/// made acceptable after ten damping increases, yields
/// [`Error::Breakdown`] carrying the best pose reached.
pub fn newton_align(
    target: &NdtTarget,
    scan: &Scan,
    initial: &Pose6,
    config: &RunConfig,
) -> Result<RegistrationResult> {
    if target.grid.is_empty() {
        return Err(Error::EmptyReference);
    }
    if scan.is_empty() {
        return Err(Error::EmptyScan("nothing to align".into()));
    }
    let points = scan.positions();
    let mut pose = *initial;
    let mut current = evaluate(target, &points, &pose, config);
    let mut trace = vec![current.objective()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        if current.matched == 0 || current.score <= 0.0 {
            return Err(Error::Breakdown {
                best: pose,
                iterations,
                reason: "no scan point scores against the reference".into(),
            });
        }
        let diag_scale = Vector6::from_fn(|i, _| current.hessian[(i, i)].abs().max(1e-12));
        let mut lambda = 0.0;
        let mut increases = 0;
        let outcome = loop {
            let system = current.hessian + Matrix6::from_diagonal(&(diag_scale * lambda));
            if let Some(chol) = system.cholesky() {
                let step = clamp_step(-chol.solve(&current.gradient), config);
                let small = step_magnitude(&step) < config.transformation_epsilon;
                let candidate = apply_step(&pose, &step);
                let next = evaluate(target, &points, &candidate, config);
                if next.objective() <= current.objective() + MONOTONE_SLACK {
                    pose = candidate;
                    current = next;
                    break Some(small);
                }
                if small {
                    // Rounding-level step that does not improve: stay put.
                    break Some(true);
                }
            }
            if increases == MAX_DAMPING_INCREASES {
                break None;
            }
            lambda = if lambda == 0.0 {
                DAMPING_START
            } else {
                lambda * DAMPING_FACTOR
            };
            increases += 1;
        };
        let Some(small) = outcome else {
            return Err(Error::Breakdown {
                best: pose,
                iterations,
                reason: "no acceptable step after damping".into(),
            });
        };
        iterations += 1;
        trace.push(current.objective());
        if small {
            converged = true;
            break;
        }
    }

    let metrics = metrics_from(
        fitness_score(&target.index, &points, &pose, config.fitness_cap()),
        current.score,
        points.len(),
    );
    Ok(RegistrationResult {
        pose,
        iterations,
        converged,
        fitness_score: metrics.fitness_score,
        tp_paper: metrics.tp_paper,
        tp_score: metrics.tp_score,
        score: current.score,
        score_trace: trace,
        scan_points: points.len(),
    })
}
