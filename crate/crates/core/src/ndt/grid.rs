use std::collections::{HashMap, HashSet};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Scan;
use crate::preprocess::VoxelKey;

/// Eigenvalues below this fraction of the largest one are raised to it.
pub const MIN_EIGEN_RATIO: f64 = 1e-3;
/// Absolute eigenvalue floor (m²); only matters for cells whose points are
/// (nearly) coincident, where the relative floor is zero.
pub const MIN_EIGENVALUE: f64 = 1e-6;

/// Running sufficient statistics of the points in one cell.
///
/// Sums are taken relative to the first point that entered the cell so the
/// covariance does not suffer cancellation far from the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    anchor: Vector3<f64>,
    sum: Vector3<f64>,
    outer: Matrix3<f64>,
    count: usize,
}

impl CellStats {
    fn new(anchor: Vector3<f64>) -> Self {
        Self {
            anchor,
            sum: Vector3::zeros(),
            outer: Matrix3::zeros(),
            count: 0,
        }
    }

    fn push(&mut self, p: &Vector3<f64>) {
        let d = p - self.anchor;
        self.sum += d;
        self.outer += d * d.transpose();
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.anchor + self.sum / self.count as f64
    }

    /// Population covariance (divisor = point count).
    pub fn covariance(&self) -> Matrix3<f64> {
        let n = self.count as f64;
        let m = self.sum / n;
        let c = self.outer / n - m * m.transpose();
        (c + c.transpose()) * 0.5
    }
}

/// One normal-distribution cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NdVoxel {
    pub mean: Vector3<f64>,
    /// Covariance exactly as measured.
    pub raw_covariance: Matrix3<f64>,
    /// Covariance after eigenvalue clamping; the one used for scoring.
    pub covariance: Matrix3<f64>,
    pub inverse_covariance: Matrix3<f64>,
    pub count: usize,
}

impl NdVoxel {
    fn from_stats(stats: &CellStats) -> Self {
        let raw = stats.covariance();
        let (covariance, inverse_covariance) = regularize_covariance(&raw);
        Self {
            mean: stats.mean(),
            raw_covariance: raw,
            covariance,
            inverse_covariance,
            count: stats.count,
        }
    }
}

/// Clamp small eigenvalues of a symmetric covariance and return the
/// clamped matrix with its inverse.
pub fn regularize_covariance(cov: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let eig = SymmetricEigen::new(*cov);
    let lmax = eig.eigenvalues.max();
    let floor = (MIN_EIGEN_RATIO * lmax).max(MIN_EIGENVALUE);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let v = eig.eigenvectors;
    let c = v * Matrix3::from_diagonal(&vals) * v.transpose();
    let inv = v * Matrix3::from_diagonal(&vals.map(|l| 1.0 / l)) * v.transpose();
    (
        (c + c.transpose()) * 0.5,
        (inv + inv.transpose()) * 0.5,
    )
}

/// Sparse uniform grid of normal distributions over a reference cloud.
///
/// Statistics are kept for every occupied cell; only cells with at least
/// `min_points` points carry a distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NdGrid {
    resolution: f64,
    min_points: usize,
    cells: HashMap<VoxelKey, CellStats>,
    voxels: HashMap<VoxelKey, NdVoxel>,
    lower: Vector3<f64>,
    upper: Vector3<f64>,
    point_count: usize,
}

impl NdGrid {
    pub fn build(reference: &Scan, resolution: f64, min_points: usize) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        if min_points < 4 {
            return Err(Error::InvalidArgument("min_points_per_voxel must be at least 4".into()));
        }
        if reference.is_empty() {
            return Err(Error::EmptyReference);
        }
        let mut grid = Self {
            resolution,
            min_points,
            cells: HashMap::new(),
            voxels: HashMap::new(),
            lower: Vector3::repeat(f64::INFINITY),
            upper: Vector3::repeat(f64::NEG_INFINITY),
            point_count: 0,
        };
        grid.insert(reference.points.iter().map(|p| p.position()));
        Ok(grid)
    }

    /// Add points and refresh the distributions of the cells they touch.
    pub fn insert<I>(&mut self, points: I)
    where
        I: IntoIterator<Item = Vector3<f64>>,
    {
        let mut touched = HashSet::new();
        for p in points {
            let key = VoxelKey::of(&p, self.resolution);
            self.cells
                .entry(key)
                .or_insert_with(|| CellStats::new(p))
                .push(&p);
            touched.insert(key);
            self.lower = self.lower.inf(&p);
            self.upper = self.upper.sup(&p);
            self.point_count += 1;
        }
        for key in touched {
            let stats = &self.cells[&key];
            if stats.count >= self.min_points {
                self.voxels.insert(key, NdVoxel::from_stats(stats));
            }
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn min_points(&self) -> usize {
        self.min_points
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Number of points the grid was built from.
    pub fn point_count(&self) -> usize {
        self.point_count
    }

    /// Number of occupied cells, including those below the point threshold.
    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    /// Axis-aligned bounds of the inserted points.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.lower, self.upper)
    }

    #[inline]
    pub fn key_of(&self, p: &Vector3<f64>) -> VoxelKey {
        VoxelKey::of(p, self.resolution)
    }

    #[inline]
    pub fn get(&self, key: &VoxelKey) -> Option<&NdVoxel> {
        self.voxels.get(key)
    }

    pub fn cell_stats(&self, key: &VoxelKey) -> Option<&CellStats> {
        self.cells.get(key)
    }

    /// Distributions in ascending key order.
    pub fn voxels_sorted(&self) -> Vec<(VoxelKey, &NdVoxel)> {
        let mut v: Vec<_> = self.voxels.iter().map(|(k, x)| (*k, x)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn cloud(seed: u64, n: usize, half: f64) -> Scan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Scan::from_positions((0..n).map(|_| {
            Vector3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        }))
    }

    #[test]
    fn identical_points_get_a_floored_covariance() {
        let scan = Scan::from_positions(vec![Vector3::new(0.5, 0.5, 0.5); 5]);
        let grid = NdGrid::build(&scan, 1.0, 4).unwrap();
        assert_eq!(grid.len(), 1);
        let v = grid.get(&VoxelKey::new(0, 0, 0)).unwrap();
        assert_eq!(v.count, 5);
        assert!((v.mean - Vector3::new(0.5, 0.5, 0.5)).amax() < 1e-15);
        assert!(v.raw_covariance.amax() < 1e-15);
        assert!((v.covariance - Matrix3::identity() * MIN_EIGENVALUE).amax() < 1e-18);
        assert!((v.inverse_covariance * v.covariance - Matrix3::identity()).amax() < 1e-6);
    }

    #[test]
    fn two_cluster_population_variance() {
        let mut pts = Vec::new();
        for _ in 0..3 {
            pts.push(Vector3::new(0.1, 0.5, 0.5));
            pts.push(Vector3::new(0.9, 0.5, 0.5));
        }
        let grid = NdGrid::build(&Scan::from_positions(pts), 1.0, 6).unwrap();
        let v = grid.get(&VoxelKey::new(0, 0, 0)).unwrap();
        assert!((v.mean - Vector3::new(0.5, 0.5, 0.5)).amax() < 1e-15);
        assert!((v.raw_covariance[(0, 0)] - 0.16).abs() < 1e-15);
        assert!(v.raw_covariance[(1, 1)].abs() < 1e-15);
        // The two flat directions are lifted to 1e-3 of the spread.
        assert!((v.covariance[(1, 1)] - 1.6e-4).abs() < 1e-15);
        assert!((v.covariance[(2, 2)] - 1.6e-4).abs() < 1e-15);
    }

    #[test]
    fn sparse_cells_carry_no_distribution() {
        let scan = Scan::from_positions(vec![
            Vector3::new(0.2, 0.2, 0.2),
            Vector3::new(0.3, 0.2, 0.2),
            Vector3::new(5.5, 0.2, 0.2),
            Vector3::new(5.6, 0.3, 0.2),
            Vector3::new(5.7, 0.4, 0.1),
            Vector3::new(5.8, 0.1, 0.3),
        ]);
        let grid = NdGrid::build(&scan, 1.0, 4).unwrap();
        assert_eq!(grid.occupied_cells(), 2);
        assert_eq!(grid.len(), 1);
        assert!(grid.get(&VoxelKey::new(5, 0, 0)).is_some());
        assert!(grid.get(&VoxelKey::new(0, 0, 0)).is_none());
    }

    #[test]
    fn rejects_bad_arguments() {
        let scan = cloud(1, 10, 1.0);
        assert!(NdGrid::build(&scan, 0.0, 6).is_err());
        assert!(NdGrid::build(&scan, 1.0, 3).is_err());
        assert!(matches!(NdGrid::build(&Scan::default(), 1.0, 6), Err(Error::EmptyReference)));
    }

    #[test]
    fn statistics_match_two_pass_oracle() {
        let scan = cloud(7, 10_000, 4.0);
        let resolution = 1.0;
        let grid = NdGrid::build(&scan, resolution, 6).unwrap();

        let mut groups: BTreeMap<(i64, i64, i64), Vec<Vector3<f64>>> = BTreeMap::new();
        for p in scan.positions() {
            let k = (
                (p.x / resolution).floor() as i64,
                (p.y / resolution).floor() as i64,
                (p.z / resolution).floor() as i64,
            );
            groups.entry(k).or_default().push(p);
        }
        let expected: Vec<_> = groups.iter().filter(|(_, m)| m.len() >= 6).collect();
        assert_eq!(grid.len(), expected.len());
        for (k, members) in expected {
            let n = members.len() as f64;
            let mean = members.iter().sum::<Vector3<f64>>() / n;
            let cov = members.iter().map(|p| (p - mean) * (p - mean).transpose()).sum::<Matrix3<f64>>() / n;
            let v = grid.get(&VoxelKey::new(k.0, k.1, k.2)).unwrap();
            assert_eq!(v.count, members.len());
            assert!((v.mean - mean).amax() < 1e-10);
            assert!((v.raw_covariance - cov).amax() < 1e-10);
        }
    }

    #[test]
    fn regularized_voxels_satisfy_invariants() {
        let grid = NdGrid::build(&cloud(2, 5000, 3.0), 0.5, 6).unwrap();
        for (_, v) in grid.voxels_sorted() {
            assert!((v.covariance - v.covariance.transpose()).amax() < 1e-12);
            let eig = SymmetricEigen::new(v.covariance).eigenvalues;
            assert!(eig.min() >= MIN_EIGEN_RATIO * eig.max() * (1.0 - 1e-9));
            assert!((v.inverse_covariance * v.covariance - Matrix3::identity()).amax() < 1e-6);
            assert!(v.count >= 6);
        }
    }

    #[test]
    fn incremental_insert_matches_rebuild() {
        let all = cloud(3, 6000, 3.0);
        let (head, tail) = all.points.split_at(2500);
        let mut grid = NdGrid::build(&Scan::new(head.to_vec()), 1.0, 6).unwrap();
        grid.insert(tail.iter().map(|p| p.position()));
        let rebuilt = NdGrid::build(&all, 1.0, 6).unwrap();
        assert_eq!(grid.len(), rebuilt.len());
        assert_eq!(grid.point_count(), rebuilt.point_count());
        for ((ka, a), (kb, b)) in grid.voxels_sorted().into_iter().zip(rebuilt.voxels_sorted()) {
            assert_eq!(ka, kb);
            assert_eq!(a.count, b.count);
            assert!((a.mean - b.mean).amax() < 1e-9);
            assert!((a.raw_covariance - b.raw_covariance).amax() < 1e-9);
        }
    }

    #[test]
    fn far_from_origin_keeps_precision() {
        let offset = Vector3::new(4.0e5, -3.0e5, 120.0);
        let local = cloud(4, 400, 0.45);
        let near = NdGrid::build(&local, 1.0, 6).unwrap();
        let far = NdGrid::build(&Scan::from_positions(local.positions().iter().map(|p| p + offset)), 1.0, 6).unwrap();
        let a = near.voxels_sorted();
        let b = far.voxels_sorted();
        assert_eq!(a.len(), b.len());
        for ((_, va), (_, vb)) in a.iter().zip(&b) {
            assert!((va.raw_covariance - vb.raw_covariance).amax() < 1e-9);
        }
    }
}
