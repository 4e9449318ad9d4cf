//! Analytic scene primitives and their ray intersections.
//!
//! Scene files hold one primitive per line:
//!
//! ```text
//! # kind     x y z roll pitch yaw   dimensions
//! plane      0 0 -1.8  0 0 0        40 20      # width (local x), depth (local y); `inf` for unbounded
//! box        5 2 0     0 0 0.3      1 1 2      # full extents along local x, y, z
//! cylinder   3 -2 -1.8 0 0 0        0.3 4      # radius, height along local +z from the base
//! ```
//!
//! Angles are radians. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Pose6, RigidTransform};

/// Ray parameters closer than this are treated as self-hits.
const RAY_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Rectangle in the local XY plane centred on the origin. Infinite
    /// half-extents give an unbounded plane.
    Plane { half_width: f64, half_depth: f64 },
    /// Solid box centred on the origin. A ray starting inside hits the
    /// wall it leaves through.
    Box { half_extents: Vector3<f64> },
    /// Closed cylinder around local +z, from z = 0 to z = height.
    Cylinder { radius: f64, height: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: Pose6,
    to_local: RigidTransform,
}

impl Primitive {
    pub fn new(shape: Shape, pose: Pose6) -> Self {
        Self {
            shape,
            pose,
            to_local: pose.to_matrix().inverse(),
        }
    }

    pub fn plane(pose: Pose6, width: f64, depth: f64) -> Self {
        Self::new(
            Shape::Plane {
                half_width: width / 2.0,
                half_depth: depth / 2.0,
            },
            pose,
        )
    }

    pub fn cuboid(pose: Pose6, size: Vector3<f64>) -> Self {
        Self::new(Shape::Box { half_extents: size / 2.0 }, pose)
    }

    pub fn cylinder(pose: Pose6, radius: f64, height: f64) -> Self {
        Self::new(Shape::Cylinder { radius, height }, pose)
    }

    /// Smallest ray parameter `t > 0` at which `origin + t·dir` meets the
    /// surface. `dir` need not be normalized.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = self.to_local.apply(origin);
        let d = self.to_local.rotation * dir;
        match self.shape {
            Shape::Plane {
                half_width,
                half_depth,
            } => {
                if d.z == 0.0 {
                    return None;
                }
                let t = -o.z / d.z;
                if t <= RAY_EPSILON {
                    return None;
                }
                let hit = o + d * t;
                (hit.x.abs() <= half_width && hit.y.abs() <= half_depth).then_some(t)
            }
            Shape::Box { half_extents } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k].abs() > half_extents[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[k] - o[k]) / d[k];
                    let b = (half_extents[k] - o[k]) / d[k];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far {
                    None
                } else if t_near > RAY_EPSILON {
                    Some(t_near)
                } else if t_far > RAY_EPSILON {
                    Some(t_far)
                } else {
                    None
                }
            }
            Shape::Cylinder { radius, height } => {
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > RAY_EPSILON && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let a = d.x * d.x + d.y * d.y;
                if a > 0.0 {
                    let b = 2.0 * (o.x * d.x + o.y * d.y);
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                            let z = o.z + t * d.z;
                            if (0.0..=height).contains(&z) {
                                consider(t);
                            }
                        }
                    }
                }
                if d.z != 0.0 {
                    for cap in [0.0, height] {
                        let t = (cap - o.z) / d.z;
                        let x = o.x + t * d.x;
                        let y = o.y + t * d.y;
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Distance from a world point to the primitive's surface; used to check
    /// that noise-free returns lie on the scene.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        let q = self.to_local.apply(p);
        match self.shape {
            Shape::Plane {
                half_width,
                half_depth,
            } => {
                let dx = (q.x.abs() - half_width).max(0.0);
                let dy = (q.y.abs() - half_depth).max(0.0);
                let dx = if dx.is_nan() { 0.0 } else { dx };
                let dy = if dy.is_nan() { 0.0 } else { dy };
                (dx * dx + dy * dy + q.z * q.z).sqrt()
            }
            Shape::Box { half_extents } => {
                let e = q.abs() - half_extents;
                let outside = e.sup(&Vector3::zeros()).norm();
                let inside = e.max().min(0.0);
                (outside + inside).abs()
            }
            Shape::Cylinder { radius, height } => {
                let radial = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let axial = (q.z - height / 2.0).abs() - height / 2.0;
                let outside = Vector3::new(radial.max(0.0), axial.max(0.0), 0.0).norm();
                let inside = radial.max(axial).min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

/// A set of primitives in the world frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        Self { primitives }
    }

    pub fn push(&mut self, primitive: Primitive) {
        self.primitives.push(primitive);
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Nearest hit along the ray over all primitives.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(origin, dir))
            .reduce(f64::min)
    }

    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|s| s.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut scene = Scene::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let mut tokens = line.split_whitespace();
            let kind = tokens.next().unwrap_or_default().to_ascii_lowercase();
            let values = tokens
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(path, lineno, format!("non-numeric token `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let expected = match kind.as_str() {
                "plane" | "cylinder" => 8,
                "box" => 9,
                other => return Err(Error::parse(path, lineno, format!("unknown primitive `{other}`"))),
            };
            if values.len() != expected {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("`{kind}` takes {expected} numbers, found {}", values.len()),
                ));
            }
            if values[..6].iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(path, lineno, "pose must be finite"));
            }
            let dims = &values[6..];
            if dims.iter().any(|v| v.is_nan() || *v <= 0.0) {
                return Err(Error::parse(path, lineno, "dimensions must be positive"));
            }
            let pose = Pose6::new(values[0], values[1], values[2], values[3], values[4], values[5]);
            let primitive = match kind.as_str() {
                "plane" => Primitive::plane(pose, dims[0], dims[1]),
                "box" => {
                    if dims.iter().any(|v| v.is_infinite()) {
                        return Err(Error::parse(path, lineno, "box dimensions must be finite"));
                    }
                    Primitive::cuboid(pose, Vector3::new(dims[0], dims[1], dims[2]))
                }
                _ => {
                    if dims.iter().any(|v| v.is_infinite()) {
                        return Err(Error::parse(path, lineno, "cylinder dimensions must be finite"));
                    }
                    Primitive::cylinder(pose, dims[0], dims[1])
                }
            };
            scene.push(primitive);
        }
        if scene.is_empty() {
            return Err(Error::parse(path, 0, "scene has no primitives"));
        }
        Ok(scene)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# kind x y z roll pitch yaw dimensions\n");
        for p in &self.primitives {
            let a = p.pose.to_array();
            let (kind, dims) = match p.shape {
                Shape::Plane {
                    half_width,
                    half_depth,
                } => ("plane", vec![half_width * 2.0, half_depth * 2.0]),
                Shape::Box { half_extents } => ("box", (half_extents * 2.0).iter().copied().collect()),
                Shape::Cylinder { radius, height } => ("cylinder", vec![radius, height]),
            };
            let _ = write!(out, "{kind}");
            for v in a.iter().chain(dims.iter()) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    /// A cluttered room around the origin: floor, ceiling and walls with
    /// pilasters, plus crates, pillars and a table at irregular positions.
    pub fn room() -> Self {
        let mut s = Scene::default();
        let (x0, x1, y0, y1) = (-6.3, 7.0, -5.05, 4.65);
        let (floor, ceiling) = (-1.7, 2.2);
        let height = ceiling - floor;
        s.push(Primitive::cuboid(
            Pose6::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, (floor + ceiling) / 2.0, 0.0, 0.0, 0.0),
            Vector3::new(x1 - x0, y1 - y0, height),
        ));
        let mut seq = Sequence::default();
        // Pilasters along the long walls.
        let mut x = x0 + 0.9;
        while x < x1 - 0.6 {
            for y in [y0, y1] {
                let u = seq.next();
                s.push(Primitive::cuboid(
                    Pose6::new(x, y, (floor + ceiling) / 2.0, 0.0, 0.0, 0.0),
                    Vector3::new(0.3 + 0.3 * u, 0.5 + 0.4 * u, height),
                ));
            }
            x += 1.4 + 1.1 * seq.next();
        }
        // Pilasters along the short walls.
        let mut y = y0 + 1.1;
        while y < y1 - 0.6 {
            for x in [x0, x1] {
                let u = seq.next();
                s.push(Primitive::cuboid(
                    Pose6::new(x, y, (floor + ceiling) / 2.0, 0.0, 0.0, 0.0),
                    Vector3::new(0.5 + 0.4 * u, 0.3 + 0.3 * u, height),
                ));
            }
            y += 1.5 + 1.0 * seq.next();
        }
        // Free-standing clutter, kept at least 1.5 m from the origin.
        let mut placed = 0;
        while placed < 22 {
            let px = x0 + 0.8 + (x1 - x0 - 1.6) * seq.next();
            let py = y0 + 0.8 + (y1 - y0 - 1.6) * seq.next();
            let u = seq.next();
            if px.hypot(py) < 1.5 {
                continue;
            }
            if placed % 3 == 0 {
                s.push(Primitive::cylinder(
                    Pose6::new(px, py, floor, 0.0, 0.0, 0.0),
                    0.08 + 0.25 * u,
                    0.6 + 3.0 * seq.next(),
                ));
            } else {
                let h = 0.3 + 1.5 * seq.next();
                s.push(Primitive::cuboid(
                    Pose6::new(px, py, floor + h / 2.0, 0.0, 0.0, 3.0 * u),
                    Vector3::new(0.3 + 0.8 * u, 0.3 + 0.6 * seq.next(), h),
                ));
            }
            placed += 1;
        }
        // A table: top and four legs.
        let (tx, ty, tz) = (2.4, -1.9, floor + 0.75);
        s.push(Primitive::cuboid(Pose6::new(tx, ty, tz, 0.0, 0.0, 0.2), Vector3::new(1.6, 0.9, 0.05)));
        let table = Pose6::new(tx, ty, floor, 0.0, 0.0, 0.2).to_matrix();
        for (lx, ly) in [(-0.7, -0.35), (0.7, -0.35), (-0.7, 0.35), (0.7, 0.35)] {
            let p = table.apply(&Vector3::new(lx, ly, 0.0));
            s.push(Primitive::cylinder(Pose6::new(p.x, p.y, floor, 0.0, 0.0, 0.0), 0.04, 0.72));
        }
        s
    }

    /// A straight corridor along +x from `-10` to `length + 10`: flat floor
    /// at z = -1.8, walls about 4 m either side with pilasters and recessed
    /// bays, overhead pipes, and crates and pillars along both walls.
    pub fn corridor(length: f64) -> Self {
        let mut s = Scene::default();
        let floor = -1.8;
        let wall_height = 5.0;
        let x0 = -10.0;
        let x1 = length + 10.0;
        let mid = (x0 + x1) / 2.0;
        let span = x1 - x0;
        s.push(Primitive::plane(Pose6::new(mid, 0.0, floor, 0.0, 0.0, 0.0), span + 2.0, 14.0));
        for y in [4.35_f64, -4.05] {
            s.push(Primitive::cuboid(
                Pose6::new(mid, y + 0.2 * y.signum(), floor + wall_height / 2.0, 0.0, 0.0, 0.0),
                Vector3::new(span, 0.4, wall_height),
            ));
        }
        for x in [x0, x1] {
            s.push(Primitive::cuboid(
                Pose6::new(x, 0.0, floor + wall_height / 2.0, 0.0, 0.0, 0.0),
                Vector3::new(0.4, 9.0, wall_height),
            ));
        }
        let mut seq = Sequence::default();
        for y_wall in [4.35, -4.05_f64] {
            let inward = -y_wall.signum();
            let mut x = x0 + 0.7 * seq.next();
            while x < x1 {
                let u = seq.next();
                let depth = 0.2 + 0.5 * seq.next();
                s.push(Primitive::cuboid(
                    Pose6::new(x, y_wall + inward * depth / 2.0, floor + wall_height / 2.0, 0.0, 0.0, 0.0),
                    Vector3::new(0.3 + 0.5 * u, depth, wall_height),
                ));
                x += 1.2 + 1.6 * seq.next();
            }
        }
        // Overhead pipes across the corridor.
        let mut x = x0 + 2.0;
        while x < x1 {
            let z = floor + 3.4 + 0.8 * seq.next();
            s.push(Primitive::cylinder(
                Pose6::new(x, -4.0, z, -std::f64::consts::FRAC_PI_2, 0.0, 0.0),
                0.06 + 0.1 * seq.next(),
                8.0,
            ));
            x += 3.0 + 4.0 * seq.next();
        }
        // Clutter along both walls.
        let mut x = x0 + 1.3;
        let mut k = 0usize;
        while x < x1 - 1.0 {
            let u = seq.next();
            let side = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            let y = side * (2.6 - 0.7 * seq.next());
            if k.is_multiple_of(3) {
                s.push(Primitive::cylinder(
                    Pose6::new(x, y, floor, 0.0, 0.0, 0.0),
                    0.1 + 0.25 * u,
                    1.0 + 3.0 * seq.next(),
                ));
            } else {
                let h = 0.5 + 1.5 * seq.next();
                s.push(Primitive::cuboid(
                    Pose6::new(x, y, floor + h / 2.0, 0.0, 0.0, 0.8 * u - 0.4),
                    Vector3::new(0.4 + 0.8 * u, 0.4 + 0.5 * seq.next(), h),
                ));
            }
            x += 1.0 + 1.8 * seq.next();
            k += 1;
        }
        s
    }
}

/// Additive-recurrence low-discrepancy sequence in `[0, 1)`, used to lay
/// out the built-in scenes deterministically.
#[derive(Debug, Default)]
struct Sequence {
    k: u64,
}

impl Sequence {
    fn next(&mut self) -> f64 {
        self.k += 1;
        (0.5 + self.k as f64 * 0.618_033_988_749_894_9).fract()
    }
}
