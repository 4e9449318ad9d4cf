//! The NDT objective `E(X, t) = Σ exp(−dᵀ Σ⁻¹ d / 2)` and the analytic
//! gradient and Hessian of `f(t) = −E(X, t)` with respect to the six pose
//! parameters.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;

use super::grid::{NdGrid, NdVoxel};
use crate::geometry::{rot_x, rot_y, rot_z, Pose6};
use crate::io::config::Neighborhood;

/// Points per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the number of worker threads.
const CHUNK: usize = 2048;

/// Objective and derivatives at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEval {
    /// `E(X, t)`, the summed likelihood (to be maximized).
    pub score: f64,
    /// Gradient of `f = −E`.
    pub gradient: Vector6<f64>,
    /// Hessian of `f = −E`.
    pub hessian: Matrix6<f64>,
    /// Scan points that found at least one distribution.
    pub matched: usize,
}

impl ScoreEval {
    fn zero() -> Self {
        Self {
            score: 0.0,
            gradient: Vector6::zeros(),
            hessian: Matrix6::zeros(),
            matched: 0,
        }
    }

    fn add(mut self, other: &ScoreEval) -> Self {
        self.score += other.score;
        self.gradient += other.gradient;
        self.hessian += other.hessian;
        self.matched += other.matched;
        self
    }

    /// Objective value being minimized.
    pub fn objective(&self) -> f64 {
        -self.score
    }
}

/// First and second derivatives of the elementary rotations.
fn d_rot_x(a: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.sin_cos();
    (
        Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s),
        Matrix3::new(0.0, 0.0, 0.0, 0.0, -c, s, 0.0, -s, -c),
    )
}

fn d_rot_y(a: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.sin_cos();
    (
        Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s),
        Matrix3::new(-c, 0.0, -s, 0.0, 0.0, 0.0, s, 0.0, -c),
    )
}

fn d_rot_z(a: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.sin_cos();
    (
        Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(-c, s, 0.0, -s, -c, 0.0, 0.0, 0.0, 0.0),
    )
}

/// Rotation and its first and second partials with respect to
/// (roll, pitch, yaw).
#[derive(Debug, Clone)]
pub struct RotationDerivatives {
    pub rotation: Matrix3<f64>,
    pub first: [Matrix3<f64>; 3],
    /// Upper triangle `(0,0) (0,1) (0,2) (1,1) (1,2) (2,2)`.
    pub second: [Matrix3<f64>; 6],
}

impl RotationDerivatives {
    pub fn new(pose: &Pose6) -> Self {
        let (rx, ry, rz) = (rot_x(pose.roll), rot_y(pose.pitch), rot_z(pose.yaw));
        let (drx, ddrx) = d_rot_x(pose.roll);
        let (dry, ddry) = d_rot_y(pose.pitch);
        let (drz, ddrz) = d_rot_z(pose.yaw);
        Self {
            rotation: rz * ry * rx,
            first: [rz * ry * drx, rz * dry * rx, drz * ry * rx],
            second: [
                rz * ry * ddrx,
                rz * dry * drx,
                drz * ry * drx,
                rz * ddry * rx,
                drz * dry * rx,
                ddrz * ry * rx,
            ],
        }
    }
}

#[inline]
fn upper_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

fn for_each_voxel<'g>(
    grid: &'g NdGrid,
    p: &Vector3<f64>,
    neighborhood: Neighborhood,
    mut f: impl FnMut(&'g NdVoxel),
) {
    let key = grid.key_of(p);
    match neighborhood {
        Neighborhood::Single => {
            if let Some(v) = grid.get(&key) {
                f(v);
            }
        }
        Neighborhood::Block27 => {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(v) = grid.get(&key.offset(dx, dy, dz)) {
                            f(v);
                        }
                    }
                }
            }
        }
    }
}

/// `E(X, t)` alone.
pub fn score(grid: &NdGrid, points: &[Vector3<f64>], pose: &Pose6, neighborhood: Neighborhood) -> f64 {
    let t = pose.to_matrix();
    let partials: Vec<f64> = points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut e = 0.0;
            for x in chunk {
                let xp = t.apply(x);
                for_each_voxel(grid, &xp, neighborhood, |v| {
                    let d = xp - v.mean;
                    e += (-0.5 * d.dot(&(v.inverse_covariance * d))).exp();
                });
            }
            e
        })
        .collect();
    partials.iter().sum()
}

/// Objective with analytic gradient and Hessian of `f = −E`.
pub fn score_derivatives(
    grid: &NdGrid,
    points: &[Vector3<f64>],
    pose: &Pose6,
    neighborhood: Neighborhood,
) -> ScoreEval {
    let rd = RotationDerivatives::new(pose);
    let trans = pose.translation();
    let partials: Vec<ScoreEval> = points
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = ScoreEval::zero();
            let mut jac = [Vector3::zeros(); 6];
            jac[0] = Vector3::x();
            jac[1] = Vector3::y();
            jac[2] = Vector3::z();
            for x in chunk {
                let xp = rd.rotation * x + trans;
                for k in 0..3 {
                    jac[3 + k] = rd.first[k] * x;
                }
                let second: [Vector3<f64>; 6] = std::array::from_fn(|k| rd.second[k] * x);
                let mut matched = false;
                for_each_voxel(grid, &xp, neighborhood, |v| {
                    matched = true;
                    let d = xp - v.mean;
                    let cd = v.inverse_covariance * d;
                    let s = (-0.5 * d.dot(&cd)).exp();
                    if s == 0.0 {
                        return;
                    }
                    acc.score += s;
                    let cdj: [f64; 6] = std::array::from_fn(|i| cd.dot(&jac[i]));
                    let cj: [Vector3<f64>; 6] = std::array::from_fn(|i| v.inverse_covariance * jac[i]);
                    for i in 0..6 {
                        acc.gradient[i] += s * cdj[i];
                        for j in i..6 {
                            let mut h = jac[j].dot(&cj[i]) - cdj[i] * cdj[j];
                            if i >= 3 && j >= 3 {
                                h += cd.dot(&second[upper_index(i - 3, j - 3)]);
                            }
                            acc.hessian[(i, j)] += s * h;
                        }
                    }
                });
                if matched {
                    acc.matched += 1;
                }
            }
            for i in 0..6 {
                for j in 0..i {
                    acc.hessian[(i, j)] = acc.hessian[(j, i)];
                }
            }
            acc
        })
        .collect();
    partials.iter().fold(ScoreEval::zero(), |a, b| a.add(b))
}

/// Central-difference derivatives of `f = −E`. Slow and noisy; meant for
/// cross-checking the analytic path.
pub fn score_derivatives_numeric(
    grid: &NdGrid,
    points: &[Vector3<f64>],
    pose: &Pose6,
    neighborhood: Neighborhood,
) -> ScoreEval {
    let f = |p: &Pose6| -score(grid, points, p, neighborhood);
    let shift = |p: &Pose6, i: usize, h: f64| {
        let mut a = p.to_array();
        a[i] += h;
        Pose6::from_array(a)
    };
    let grad_at = |p: &Pose6, h: f64| {
        Vector6::from_fn(|i, _| (f(&shift(p, i, h)) - f(&shift(p, i, -h))) / (2.0 * h))
    };
    let gradient = grad_at(pose, 1e-6);
    let hh = 1e-4;
    let mut hessian = Matrix6::zeros();
    for j in 0..6 {
        let col = (grad_at(&shift(pose, j, hh), 1e-6) - grad_at(&shift(pose, j, -hh), 1e-6)) / (2.0 * hh);
        hessian.set_column(j, &col);
    }
    hessian = (hessian + hessian.transpose()) * 0.5;
    let full = score_derivatives(grid, points, pose, neighborhood);
    ScoreEval {
        score: full.score,
        gradient,
        hessian,
        matched: full.matched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Scan;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference spread over a 3 m cube and a scan drawn from the same
    /// region.
    fn instance(seed: u64, n_ref: usize, n_scan: usize) -> (NdGrid, Vec<Vector3<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<Vector3<f64>> {
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..1.5),
                    )
                })
                .collect()
        };
        let reference = draw(n_ref);
        let scan = draw(n_scan);
        (NdGrid::build(&Scan::from_positions(reference), 1.0, 6).unwrap(), scan)
    }

    fn small_pose(seed: u64) -> Pose6 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        Pose6::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        )
    }

    #[test]
    fn point_at_a_mean_scores_one() {
        let (grid, _) = instance(1, 400, 0);
        let (_, v) = grid.voxels_sorted()[0];
        let e = score(&grid, &[v.mean], &Pose6::IDENTITY, Neighborhood::Single);
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scan_outside_the_grid_scores_zero() {
        let (grid, _) = instance(2, 400, 0);
        let far: Vec<_> = (0..10).map(|i| Vector3::new(100.0 + i as f64, 0.0, 0.0)).collect();
        assert_eq!(score(&grid, &far, &Pose6::IDENTITY, Neighborhood::Single), 0.0);
        assert_eq!(score(&grid, &far, &Pose6::IDENTITY, Neighborhood::Block27), 0.0);
        let eval = score_derivatives(&grid, &far, &Pose6::IDENTITY, Neighborhood::Single);
        assert_eq!(eval.matched, 0);
        assert_eq!(eval.gradient, Vector6::zeros());
    }

    #[test]
    fn score_matches_per_point_oracle() {
        let (grid, scan) = instance(3, 600, 5);
        let pose = small_pose(3);
        let r = rotation_matrix_oracle(&pose);
        let t = Vector3::new(pose.x, pose.y, pose.z);
        let mut expected = 0.0;
        for x in &scan {
            let y = r * x + t;
            let key = crate::preprocess::VoxelKey::new(y.x.floor() as i64, y.y.floor() as i64, y.z.floor() as i64);
            if let Some(v) = grid.get(&key) {
                let d = y - v.mean;
                let c = v.covariance.try_inverse().unwrap();
                expected += (-0.5 * (d.transpose() * c * d)[(0, 0)]).exp();
            }
        }
        let e = score(&grid, &scan, &pose, Neighborhood::Single);
        assert!((e - expected).abs() < 1e-12, "{e} vs {expected}");
    }

    /// R = Rz(yaw)·Ry(pitch)·Rx(roll) written out longhand.
    fn rotation_matrix_oracle(p: &Pose6) -> Matrix3<f64> {
        let (sr, cr) = p.roll.sin_cos();
        let (sp, cp) = p.pitch.sin_cos();
        let (sy, cy) = p.yaw.sin_cos();
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    fn shifted(p: &Pose6, i: usize, h: f64) -> Pose6 {
        let mut a = p.to_array();
        a[i] += h;
        Pose6::from_array(a)
    }

    fn assert_close(analytic: f64, numeric: f64, rel: f64, abs: f64, what: &str) {
        assert!(
            (analytic - numeric).abs() <= rel * numeric.abs() + abs,
            "{what}: analytic {analytic} vs numeric {numeric}"
        );
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for seed in 0..5 {
            for nb in [Neighborhood::Single, Neighborhood::Block27] {
                let (grid, scan) = instance(seed, 500, 200);
                let pose = small_pose(seed);
                let eval = score_derivatives(&grid, &scan, &pose, nb);
                let f = |p: &Pose6| -score(&grid, &scan, p, nb);
                let h = 1e-6;
                for i in 0..6 {
                    let fd = (f(&shifted(&pose, i, h)) - f(&shifted(&pose, i, -h))) / (2.0 * h);
                    assert_close(eval.gradient[i], fd, 1e-4, 1e-6, &format!("g[{i}] seed {seed}"));
                }
                for j in 0..6 {
                    let gp = score_derivatives(&grid, &scan, &shifted(&pose, j, h), nb).gradient;
                    let gm = score_derivatives(&grid, &scan, &shifted(&pose, j, -h), nb).gradient;
                    let col = (gp - gm) / (2.0 * h);
                    for i in 0..6 {
                        assert_close(eval.hessian[(i, j)], col[i], 1e-3, 1e-4, &format!("H[{i},{j}] seed {seed}"));
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let pose = Pose6::new(0.0, 0.0, 0.0, 0.3, -0.7, 1.1);
        let rd = RotationDerivatives::new(&pose);
        let h = 1e-6;
        for k in 0..3 {
            let plus = RotationDerivatives::new(&shifted(&pose, 3 + k, h));
            let minus = RotationDerivatives::new(&shifted(&pose, 3 + k, -h));
            let fd = (plus.rotation - minus.rotation) / (2.0 * h);
            assert!((fd - rd.first[k]).amax() < 1e-8);
            for m in 0..3 {
                let fd2 = (plus.first[m] - minus.first[m]) / (2.0 * h);
                assert!((fd2 - rd.second[upper_index(m, k)]).amax() < 1e-8);
            }
        }
        assert!((rd.rotation - rotation_matrix_oracle(&pose)).amax() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_symmetric_means() {
        // Isotropic blobs with the scan exactly at their means.
        let mut pts = Vec::new();
        let mut scan = Vec::new();
        for c in [Vector3::new(0.5, 0.5, 0.5), Vector3::new(-1.5, 2.5, 0.5), Vector3::new(3.5, -0.5, 1.5)] {
            for s in [-1.0, 1.0] {
                for axis in 0..3 {
                    let mut p = c;
                    p[axis] += 0.2 * s;
                    pts.push(p);
                }
            }
            scan.push(c);
        }
        let grid = NdGrid::build(&Scan::from_positions(pts), 1.0, 6).unwrap();
        assert_eq!(grid.len(), 3);
        for nb in [Neighborhood::Single, Neighborhood::Block27] {
            let eval = score_derivatives(&grid, &scan, &Pose6::IDENTITY, nb);
            assert!(eval.gradient.amax() < 1e-10, "{:?}", eval.gradient);
        }
    }

    #[test]
    fn derivative_mode_fallback_agrees() {
        let (grid, scan) = instance(9, 500, 150);
        let pose = small_pose(9);
        let a = score_derivatives(&grid, &scan, &pose, Neighborhood::Single);
        let n = score_derivatives_numeric(&grid, &scan, &pose, Neighborhood::Single);
        assert_eq!(a.score, n.score);
        assert!((a.gradient - n.gradient).amax() < 1e-4 * a.gradient.amax().max(1.0));
        assert!((a.hessian - n.hessian).amax() < 1e-2 * a.hessian.amax().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn score_is_bounded_by_point_count(
            seed in 0u64..1000,
            x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64,
            roll in -3.0..3.0f64, pitch in -1.5..1.5f64, yaw in -3.0..3.0f64,
        ) {
            let (grid, scan) = instance(seed, 300, 80);
            let pose = Pose6::new(x, y, z, roll, pitch, yaw);
            let e = score(&grid, &scan, &pose, Neighborhood::Single);
            prop_assert!((0.0..=scan.len() as f64).contains(&e));
            let eval = score_derivatives(&grid, &scan, &pose, Neighborhood::Single);
            prop_assert!((eval.score - e).abs() < 1e-9);
            prop_assert!((eval.hessian - eval.hessian.transpose()).amax() < 1e-10);
        }

        #[test]
        fn block_neighbourhood_is_bounded_by_27n(seed in 0u64..1000) {
            let (grid, scan) = instance(seed, 300, 80);
            let e = score(&grid, &scan, &small_pose(seed), Neighborhood::Block27);
            prop_assert!(e >= 0.0 && e <= 27.0 * scan.len() as f64);
        }

        #[test]
        fn translation_equivariance(seed in 0u64..1000, sx in -20i32..20, sy in -20i32..20, sz in -5i32..5) {
            let (grid, scan) = instance(seed, 300, 80);
            let shift = Vector3::new(sx as f64, sy as f64, sz as f64);
            let mut reference = Vec::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..300 {
                reference.push(Vector3::new(
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..1.5),
                ) + shift);
            }
            let moved_grid = NdGrid::build(&Scan::from_positions(reference), 1.0, 6).unwrap();
            let moved_scan: Vec<_> = scan.iter().map(|p| p + shift).collect();
            let a = score(&grid, &scan, &Pose6::IDENTITY, Neighborhood::Single);
            let b = score(&moved_grid, &moved_scan, &Pose6::IDENTITY, Neighborhood::Single);
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }
}
