//! Range gating and voxel-grid down-sampling.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Scan};

/// Integer cell index of a uniform grid.
///
/// Computed with a true floor, so `[0, leaf)` is cell 0, `[-leaf, 0)` is
/// cell −1, and a point exactly on a boundary falls in the higher cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey {
    pub ix: i64,
    pub iy: i64,
    pub iz: i64,
}

impl VoxelKey {
    #[inline]
    pub fn new(ix: i64, iy: i64, iz: i64) -> Self {
        Self { ix, iy, iz }
    }

    #[inline]
    pub fn of(p: &Vector3<f64>, leaf: f64) -> Self {
        Self {
            ix: (p.x / leaf).floor() as i64,
            iy: (p.y / leaf).floor() as i64,
            iz: (p.z / leaf).floor() as i64,
        }
    }

    #[inline]
    pub fn offset(&self, dx: i64, dy: i64, dz: i64) -> Self {
        Self::new(self.ix + dx, self.iy + dy, self.iz + dz)
    }

    /// Lower corner of the cell.
    pub fn min_corner(&self, leaf: f64) -> Vector3<f64> {
        Vector3::new(self.ix as f64, self.iy as f64, self.iz as f64) * leaf
    }
}

/// Keep points whose distance from the frame origin lies in
/// `[min_range, max_range]`. Order is preserved.
///
/// Distances are measured in the scan's own frame, so this must run on
/// sensor-frame scans before any transform into the map frame.
pub fn range_filter(scan: &Scan, min_range: f64, max_range: f64) -> Scan {
    let points = scan
        .points
        .iter()
        .filter(|p| {
            let r = p.range();
            r >= min_range && r <= max_range
        })
        .copied()
        .collect();
    scan.with_points(points)
}

#[derive(Default)]
struct Centroid {
    sum: Vector3<f64>,
    n: usize,
    intensity_sum: f64,
    intensity_n: usize,
}

/// Replace the points of every occupied voxel by their centroid (x, y, z
/// and intensity). Ring and timestamp are dropped since a centroid belongs
/// to no particular beam. Output is sorted by voxel key.
pub fn voxel_grid_filter(scan: &Scan, leaf_size: f64) -> Scan {
    assert!(leaf_size > 0.0, "leaf size must be positive");
    let mut cells: HashMap<VoxelKey, Centroid> = HashMap::new();
    for p in &scan.points {
        let pos = p.position();
        let c = cells.entry(VoxelKey::of(&pos, leaf_size)).or_default();
        c.sum += pos;
        c.n += 1;
        if let Some(i) = p.intensity {
            c.intensity_sum += i as f64;
            c.intensity_n += 1;
        }
    }
    let mut keys: Vec<VoxelKey> = cells.keys().copied().collect();
    keys.sort_unstable();
    let points = keys
        .iter()
        .map(|k| {
            let c = &cells[k];
            let mut p = Point::from_vector(&(c.sum / c.n as f64));
            if c.intensity_n > 0 {
                p.intensity = Some((c.intensity_sum / c.intensity_n as f64) as f32);
            }
            p
        })
        .collect();
    scan.with_points(points)
}
