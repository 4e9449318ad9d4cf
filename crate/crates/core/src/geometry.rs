//! Points, scans and 6-DOF poses.
//!
//! Rotations use the extrinsic X-Y-Z convention: roll about x is applied
//! first, then pitch about y, then yaw about z, so `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// A single LiDAR return.
///
/// `intensity`, `ring` and `timestamp` are optional because not every driver
/// emits them; a missing field is `None`, never a sentinel value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: Option<f32>,
    pub ring: Option<u16>,
    pub timestamp: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: None,
            ring: None,
            timestamp: None,
        }
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    #[inline]
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn set_position(&mut self, p: &Vector3<f64>) {
        self.x = p.x;
        self.y = p.y;
        self.z = p.z;
    }

    /// Euclidean distance from the frame origin.
    #[inline]
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self
                .intensity
                .is_none_or(|i| (0.0..=255.0).contains(&i))
            && self.timestamp.is_none_or(|t| t.is_finite() && t >= 0.0)
    }
}

/// An ordered collection of returns in one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scan {
    pub points: Vec<Point>,
    pub frame_id: String,
    pub stamp: f64,
}

impl Scan {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            frame_id: String::new(),
            stamp: 0.0,
        }
    }

    pub fn from_positions<I>(positions: I) -> Self
    where
        I: IntoIterator<Item = Vector3<f64>>,
    {
        Self::new(positions.into_iter().map(|p| Point::from_vector(&p)).collect())
    }

    pub fn with_stamp(mut self, stamp: f64) -> Self {
        self.stamp = stamp;
        self
    }

    pub fn with_frame(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(Point::position).collect()
    }

    pub fn is_valid(&self) -> bool {
        self.points.iter().all(Point::is_valid)
    }

    /// Copy of this scan with a different point set, keeping frame and stamp.
    pub fn with_points(&self, points: Vec<Point>) -> Self {
        Self {
            points,
            frame_id: self.frame_id.clone(),
            stamp: self.stamp,
        }
    }
}

/// Rigid transform as rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn then_after(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// 6-DOF pose parameter vector `(x, y, z, roll, pitch, yaw)`.
///
/// Angles are stored as given; [`Pose6::approx_eq`] and [`angle_diff`]
/// compare them modulo 2π.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Wrap an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Signed difference `a − b` wrapped into (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b)
}

impl Pose6 {
    pub const IDENTITY: Pose6 = Pose6 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw,
        }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.roll, self.pitch, self.yaw)
    }

    pub fn to_matrix(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation(),
            translation: self.translation(),
        }
    }

    /// Extract pose parameters from a rigid transform.
    ///
    /// At gimbal lock (|pitch| = π/2) only `yaw − roll` (or `yaw + roll`) is
    /// observable; roll is then fixed to zero.
    pub fn from_matrix(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sp.asin();
        let cp = (r[(2, 1)] * r[(2, 1)] + r[(2, 2)] * r[(2, 2)]).sqrt();
        let (roll, yaw) = if cp > 1e-12 {
            (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
        } else {
            (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
        };
        Self::new(
            t.translation.x,
            t.translation.y,
            t.translation.z,
            roll,
            pitch,
            yaw,
        )
    }

    /// Pose equivalent to applying `b` first and then `self`.
    pub fn compose(&self, b: &Pose6) -> Pose6 {
        Pose6::from_matrix(&self.to_matrix().then_after(&b.to_matrix()))
    }

    pub fn inverse(&self) -> Pose6 {
        Pose6::from_matrix(&self.to_matrix().inverse())
    }

    /// Relative motion taking `self` to `other`, i.e. `self⁻¹ ∘ other`.
    pub fn delta_to(&self, other: &Pose6) -> Pose6 {
        Pose6::from_matrix(&self.to_matrix().inverse().then_after(&other.to_matrix()))
    }

    /// Euclidean distance between the translation parts.
    pub fn translation_distance(&self, other: &Pose6) -> f64 {
        (self.translation() - other.translation()).norm()
    }

    /// Largest absolute wrapped difference among the three angles.
    pub fn max_angle_error(&self, other: &Pose6) -> f64 {
        angle_diff(self.roll, other.roll)
            .abs()
            .max(angle_diff(self.pitch, other.pitch).abs())
            .max(angle_diff(self.yaw, other.yaw).abs())
    }

    /// Component-wise comparison with angles wrapped into (−π, π].
    pub fn approx_eq(&self, other: &Pose6, tol: f64) -> bool {
        (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && (self.z - other.z).abs() <= tol
            && self.max_angle_error(other) <= tol
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn rotation_matrix(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    rot_z(yaw) * rot_y(pitch) * rot_x(roll)
}

/// Map every point of `scan` through `pose`. Non-positional fields and order
/// are preserved.
pub fn transform_scan(scan: &Scan, pose: &Pose6) -> Scan {
    let t = pose.to_matrix();
    let points = scan
        .points
        .iter()
        .map(|p| {
            let mut q = *p;
            q.set_position(&t.apply(&p.position()));
            q
        })
        .collect();
    scan.with_points(points)
}
