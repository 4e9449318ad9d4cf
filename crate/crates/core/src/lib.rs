//! NDT scan matching, incremental mapping, localization and map-quality
//! scoring for multi-beam LiDAR point clouds, with a ray-casting LiDAR
//! simulator for ground-truth experiments.

pub mod error;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod localization;
pub mod mapping;
pub mod ndt;
pub mod preprocess;
pub mod quality;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{transform_scan, Point, Pose6, RigidTransform, Scan};
pub use io::RunConfig;
pub use ndt::{newton_align, NdGrid, NdtTarget, RegistrationResult};
