//! Ray-casting multi-beam LiDAR simulator over analytic scenes.
//!
//! Rays are generated channel-major, azimuth-minor; each channel draws its
//! range noise from its own ChaCha stream so channels can be cast in
//! parallel without changing the output.

mod preset;
mod scene;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

pub use preset::{SensorPreset, DEFAULT_HRES_DEG};
pub use scene::{Primitive, Scene, Shape};

use crate::error::{Error, Result};
use crate::geometry::{Point, Pose6, Scan};
use crate::io::{write_scan, write_trajectory, PcdEncoding, StampedPose};

/// Constant intensity written on every simulated return.
pub const SIMULATED_INTENSITY: f32 = 100.0;

/// Unit beam direction in the sensor frame.
fn beam_direction(elevation: f64, azimuth: f64) -> Vector3<f64> {
    Vector3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    )
}

/// One scan from `pose`, in the sensor frame, stamped `stamp`.
pub fn simulate_scan(scene: &Scene, preset: &SensorPreset, pose: &Pose6, stamp: f64, seed: u64) -> Scan {
    let transform = pose.to_matrix();
    let origin = transform.translation;
    let steps = preset.azimuth_steps();
    let hres = preset.hres_deg.to_radians();
    let noise = (preset.range_sigma > 0.0)
        .then(|| Normal::new(0.0, preset.range_sigma).expect("finite non-negative sigma"));

    let channels: Vec<Vec<Point>> = preset
        .elevations()
        .par_iter()
        .enumerate()
        .map(|(channel, elevation_deg)| {
            let elevation = elevation_deg.to_radians();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(channel as u64);
            let mut points = Vec::new();
            for a in 0..steps {
                let local = beam_direction(elevation, a as f64 * hres);
                let world = transform.rotation * local;
                let Some(range) = scene.cast(&origin, &world) else {
                    continue;
                };
                if range < preset.min_range || range > preset.max_range {
                    continue;
                }
                let measured = match &noise {
                    Some(n) => range + n.sample(&mut rng),
                    None => range,
                };
                let p = local * measured;
                points.push(Point {
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    intensity: Some(SIMULATED_INTENSITY),
                    ring: Some(channel as u16),
                    timestamp: Some(stamp),
                });
            }
            points
        })
        .collect();

    Scan::new(channels.into_iter().flatten().collect())
        .with_stamp(stamp)
        .with_frame("sensor")
}

/// A ground-truth trajectory through a scene with one sensor.
#[derive(Debug, Clone)]
pub struct GroundTruthDrive {
    pub poses: Vec<StampedPose>,
    pub scene: Scene,
    pub preset: SensorPreset,
    pub seed: u64,
}

impl GroundTruthDrive {
    pub fn new(poses: Vec<StampedPose>, scene: Scene, preset: SensorPreset, seed: u64) -> Result<Self> {
        if poses.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidArgument("drive stamps must be strictly increasing".into()));
        }
        if poses.iter().any(|(s, p)| !s.is_finite() || !p.is_finite()) {
            return Err(Error::InvalidArgument("drive poses must be finite".into()));
        }
        if scene.is_empty() {
            return Err(Error::InvalidArgument("scene has no primitives".into()));
        }
        preset.validate()?;
        Ok(Self {
            poses,
            scene,
            preset,
            seed,
        })
    }

    /// Seed for the scan at `index`, decorrelated from its neighbours.
    pub fn scan_seed(&self, index: usize) -> u64 {
        let mut z = self.seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Poses along +x at the given distances, level, `period` seconds apart.
pub fn straight_line_poses(distances: &[f64], period: f64) -> Vec<StampedPose> {
    distances
        .iter()
        .enumerate()
        .map(|(i, &x)| (i as f64 * period, Pose6::new(x, 0.0, 0.0, 0.0, 0.0, 0.0)))
        .collect()
}

/// One scan per drive pose.
pub fn simulate_drive(drive: &GroundTruthDrive) -> Vec<Scan> {
    drive
        .poses
        .iter()
        .enumerate()
        .map(|(i, (stamp, pose))| simulate_scan(&drive.scene, &drive.preset, pose, *stamp, drive.scan_seed(i)))
        .collect()
}

/// File name of the `index`-th scan written by [`write_drive`].
pub fn scan_file_name(index: usize) -> String {
    format!("scan_{index:05}.pcd")
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// Simulates the drive into `dir`: one binary PCD per pose plus the
/// ground-truth trajectory. Returns the written scan paths.
pub fn write_drive(drive: &GroundTruthDrive, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(drive.poses.len());
    for (i, (stamp, pose)) in drive.poses.iter().enumerate() {
        let scan = simulate_scan(&drive.scene, &drive.preset, pose, *stamp, drive.scan_seed(i));
        let path = dir.join(scan_file_name(i));
        write_scan(&scan, &path, PcdEncoding::Binary)?;
        paths.push(path);
    }
    write_trajectory(&drive.poses, &dir.join(GROUND_TRUTH_FILE))?;
    Ok(paths)
}
