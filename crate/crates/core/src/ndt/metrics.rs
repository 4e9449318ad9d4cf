//! Post-alignment quality figures: fitness score and transformation
//! probability.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose6;
use crate::kdtree::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessMetrics {
    /// Mean capped nearest-neighbour distance from the transformed scan to
    /// the reference cloud (m).
    pub fitness_score: f64,
    /// Fitness score divided by the number of scan points.
    pub tp_paper: f64,
    /// NDT score `E` divided by the number of scan points.
    pub tp_score: f64,
}

/// Mean of `min(nearest-neighbour distance, cap)` over the scan points
/// mapped through `pose`.
pub fn fitness_score(reference: &PointIndex, points: &[Vector3<f64>], pose: &Pose6, cap: f64) -> f64 {
    if points.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let t = pose.to_matrix();
    let total: f64 = points
        .iter()
        .map(|x| {
            let d2 = reference
                .nearest_distance_squared(&t.apply(x))
                .expect("non-empty index");
            d2.sqrt().min(cap)
        })
        .sum();
    total / points.len() as f64
}

/// Both transformation-probability variants from a fitness score and an
/// NDT score over `n` points.
pub fn metrics_from(fitness: f64, ndt_score: f64, n: usize) -> FitnessMetrics {
    let n = n.max(1) as f64;
    FitnessMetrics {
        fitness_score: fitness,
        tp_paper: fitness / n,
        tp_score: ndt_score / n,
    }
}
