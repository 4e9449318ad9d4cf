//! Normal Distributions Transform registration.
//!
//! The reference cloud is summarized as a sparse grid of Gaussians
//! ([`NdGrid`]); a scan is scored against it with [`score`] and aligned by
//! Newton iteration on the negated score ([`newton_align`]).

mod align;
mod grid;
mod metrics;
mod score;

pub use align::{newton_align, step_magnitude, NdtTarget, RegistrationResult};
pub use grid::{regularize_covariance, CellStats, NdGrid, NdVoxel, MIN_EIGENVALUE, MIN_EIGEN_RATIO};
pub use metrics::{fitness_score, metrics_from, FitnessMetrics};
pub use score::{score, score_derivatives, score_derivatives_numeric, RotationDerivatives, ScoreEval};
