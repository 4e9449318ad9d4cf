//! Map crispness scores: mean map entropy and mean plane variance.
//!
//! Both are averages of per-point neighbourhood statistics over a fixed
//! search radius. The query point is part of its own neighbourhood. Points
//! whose neighbourhood is too small or degenerate are "undefined" (`None`)
//! and left out of the means.

use std::f64::consts::{E, PI};
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Scan;
use crate::kdtree::KdTree;

/// Smallest neighbourhood with a usable covariance.
pub const MIN_NEIGHBORS: usize = 5;
/// Covariance determinants at or below this (m⁶) give undefined entropy.
pub const DET_FLOOR: f64 = 1e-30;

/// Population mean and covariance.
pub fn mean_covariance(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let cov = points
        .iter()
        .map(|p| {
            let d = p - mean;
            d * d.transpose()
        })
        .sum::<Matrix3<f64>>()
        / n;
    (mean, cov)
}

/// Differential entropy `½ ln((2πe)³ det Σ)` of a neighbourhood, in nats.
pub fn neighborhood_entropy(points: &[Vector3<f64>]) -> Option<f64> {
    if points.len() < MIN_NEIGHBORS {
        return None;
    }
    let (_, cov) = mean_covariance(points);
    let det = cov.determinant();
    (det > DET_FLOOR).then(|| 0.5 * ((2.0 * PI * E).powi(3) * det).ln())
}

/// Linear-interpolation percentile of unsorted data, `q` in `[0, 1]`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Upper quartile of absolute distances to the total-least-squares plane.
pub fn neighborhood_plane_variance(points: &[Vector3<f64>]) -> Option<f64> {
    if points.len() < MIN_NEIGHBORS {
        return None;
    }
    let (centroid, cov) = mean_covariance(points);
    let eig = SymmetricEigen::new(cov);
    let normal = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    let mut distances: Vec<f64> = points.iter().map(|p| (p - centroid).dot(&normal).abs()).collect();
    Some(percentile(&mut distances, 0.75))
}

/// A map with a radius-search index over its points.
#[derive(Debug, Clone)]
pub struct QualityIndex {
    tree: KdTree,
}

impl QualityIndex {
    pub fn new(map: &Scan) -> Self {
        Self {
            tree: KdTree::new(map.positions()),
        }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn neighborhood(&self, index: usize, radius: f64) -> Vec<Vector3<f64>> {
        let points = self.tree.points();
        self.tree
            .within_radius(&points[index], radius)
            .into_iter()
            .map(|i| points[i])
            .collect()
    }

    pub fn entropy(&self, index: usize, radius: f64) -> Option<f64> {
        neighborhood_entropy(&self.neighborhood(index, radius))
    }

    pub fn plane_variance(&self, index: usize, radius: f64) -> Option<f64> {
        neighborhood_plane_variance(&self.neighborhood(index, radius))
    }
}

/// Entropy of the neighbourhood of map point `index`.
pub fn point_entropy(map: &Scan, index: usize, radius: f64) -> Option<f64> {
    QualityIndex::new(map).entropy(index, radius)
}

/// Plane variance of the neighbourhood of map point `index`.
pub fn point_plane_variance(map: &Scan, index: usize, radius: f64) -> Option<f64> {
    QualityIndex::new(map).plane_variance(index, radius)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapQualityReport {
    /// Mean map entropy (nats); `None` when no point has a defined entropy.
    pub mme: Option<f64>,
    /// Mean plane variance (m); `None` when no point has a defined value.
    pub mpv: Option<f64>,
    pub radius: f64,
    pub n_points: usize,
    /// Points missing either metric.
    pub skipped_points: usize,
    pub skipped_entropy: usize,
    pub skipped_plane_variance: usize,
    #[serde(skip)]
    pub per_point_entropy: Vec<Option<f64>>,
    #[serde(skip)]
    pub per_point_plane_variance: Vec<Option<f64>>,
}

fn defined_mean(values: &[Option<f64>]) -> (Option<f64>, usize) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - defined.len();
    if defined.is_empty() {
        (None, skipped)
    } else {
        (Some(defined.iter().sum::<f64>() / defined.len() as f64), skipped)
    }
}

/// Per-point entropy and plane variance over the whole map, with their
/// means over defined points.
pub fn map_quality(map: &Scan, radius: f64) -> Result<MapQualityReport> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!("quality radius must be positive, got {radius}")));
    }
    if map.is_empty() {
        return Err(Error::EmptyScan("map has no points".into()));
    }
    let index = QualityIndex::new(map);
    let per_point: Vec<(Option<f64>, Option<f64>)> = (0..map.len())
        .into_par_iter()
        .map(|i| {
            let hood = index.neighborhood(i, radius);
            (neighborhood_entropy(&hood), neighborhood_plane_variance(&hood))
        })
        .collect();
    let (entropy, plane): (Vec<_>, Vec<_>) = per_point.into_iter().unzip();
    let (mme, skipped_entropy) = defined_mean(&entropy);
    let (mpv, skipped_plane_variance) = defined_mean(&plane);
    if mme.is_none() && mpv.is_none() {
        return Err(Error::DegenerateMap);
    }
    let skipped_points = entropy
        .iter()
        .zip(&plane)
        .filter(|(h, v)| h.is_none() || v.is_none())
        .count();
    Ok(MapQualityReport {
        mme,
        mpv,
        radius,
        n_points: map.len(),
        skipped_points,
        skipped_entropy,
        skipped_plane_variance,
        per_point_entropy: entropy,
        per_point_plane_variance: plane,
    })
}

fn opt_text(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

/// Per-point CSV `x,y,z,entropy,plane_variance`, `nan` where undefined.
pub fn write_quality_points(map: &Scan, report: &MapQualityReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "x,y,z,entropy,plane_variance").map_err(io)?;
    for ((p, h), v) in map
        .points
        .iter()
        .zip(&report.per_point_entropy)
        .zip(&report.per_point_plane_variance)
    {
        writeln!(out, "{},{},{},{},{}", p.x, p.y, p.z, opt_text(*h), opt_text(*v)).map_err(io)?;
    }
    out.flush().map_err(io)
}
