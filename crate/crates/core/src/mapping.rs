//! Incremental NDT map building.
//!
//! Each scan is aligned against the map accumulated so far and appended
//! once the vehicle has moved at least `min_add_shift` since the last
//! addition. The map cloud is never decimated; only the ND grid
//! summarizes it.

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::geometry::{transform_scan, Pose6, Scan};
use crate::io::{GuessMode, RunConfig, StampedPose};
use crate::kdtree::PointIndex;
use crate::ndt::{newton_align, NdGrid, NdtTarget};
use crate::preprocess::{range_filter, voxel_grid_filter};
use crate::report::ScanRecord;

#[derive(Debug, Clone)]
pub struct MapBuildState {
    map_cloud: Scan,
    target: NdtTarget,
    last_added_pose: Pose6,
    current_pose: Pose6,
    previous_delta: Pose6,
    trajectory: Vec<StampedPose>,
    stats: Vec<ScanRecord>,
    /// Map size at the last full grid build.
    built_size: usize,
    full_rebuilds: usize,
}

/// Starts a map from the first scan, placed at the identity pose.
pub fn map_init(first_scan: &Scan, config: &RunConfig) -> Result<MapBuildState> {
    config.validate()?;
    let filtered = range_filter(first_scan, config.min_range, config.max_range);
    if filtered.is_empty() {
        return Err(Error::EmptyScan(format!(
            "first scan has no points within [{}, {}] m",
            config.min_range, config.max_range
        )));
    }
    let mut map_cloud = filtered;
    map_cloud.frame_id = "map".into();
    let target = NdtTarget::new(&map_cloud, config)?;
    let metrics = target.fitness_metrics(&voxel_grid_filter(&map_cloud, config.map_leaf_size), &Pose6::IDENTITY, config);
    let record = ScanRecord {
        scan_index: 0,
        stamp: first_scan.stamp,
        pose: Pose6::IDENTITY,
        iterations: 0,
        converged: true,
        fitness_score: metrics.fitness_score,
        tp_paper: metrics.tp_paper,
        tp_score: metrics.tp_score,
        added: true,
        rejected: false,
        breakdown: false,
        wall_ms: None,
    };
    Ok(MapBuildState {
        built_size: map_cloud.len(),
        map_cloud,
        target,
        last_added_pose: Pose6::IDENTITY,
        current_pose: Pose6::IDENTITY,
        previous_delta: Pose6::IDENTITY,
        trajectory: vec![(first_scan.stamp, Pose6::IDENTITY)],
        stats: vec![record],
        full_rebuilds: 1,
    })
}

/// Functional form of [`MapBuildState::step`].
pub fn map_step(mut state: MapBuildState, scan: &Scan, config: &RunConfig) -> MapBuildState {
    state.step(scan, config);
    state
}

impl MapBuildState {
    /// Seeds the constant-velocity guess for the second scan with the
    /// known motion between the first two scans.
    pub fn with_initial_motion(mut self, delta: Pose6) -> Self {
        self.previous_delta = delta;
        self
    }

    pub fn map_cloud(&self) -> &Scan {
        &self.map_cloud
    }

    pub fn grid(&self) -> &NdGrid {
        self.target.grid()
    }

    pub fn target(&self) -> &NdtTarget {
        &self.target
    }

    pub fn current_pose(&self) -> Pose6 {
        self.current_pose
    }

    pub fn last_added_pose(&self) -> Pose6 {
        self.last_added_pose
    }

    pub fn trajectory(&self) -> &[StampedPose] {
        &self.trajectory
    }

    pub fn stats(&self) -> &[ScanRecord] {
        &self.stats
    }

    /// Number of times the grid was built from the whole map.
    pub fn full_rebuilds(&self) -> usize {
        self.full_rebuilds
    }

    pub fn into_map(self) -> Scan {
        self.map_cloud
    }

    /// Aligns one scan, extends the map if the vehicle moved far enough,
    /// and records the outcome. Scans that fail to align are skipped with
    /// the pose held.
    pub fn step(&mut self, scan: &Scan, config: &RunConfig) -> &ScanRecord {
        let scan_index = self.trajectory.len();
        let filtered = range_filter(scan, config.min_range, config.max_range);
        let input = voxel_grid_filter(&filtered, config.map_leaf_size);
        let guess = match config.initial_guess {
            GuessMode::ConstantVelocity => self.current_pose.compose(&self.previous_delta),
            GuessMode::Static => self.current_pose,
        };

        let mut record = ScanRecord {
            scan_index,
            stamp: scan.stamp,
            pose: self.current_pose,
            iterations: 0,
            converged: false,
            fitness_score: f64::NAN,
            tp_paper: f64::NAN,
            tp_score: f64::NAN,
            added: false,
            rejected: false,
            breakdown: true,
            wall_ms: None,
        };

        let outcome = if input.is_empty() {
            Err(Error::EmptyScan(format!("scan {scan_index} is empty after range filtering")))
        } else {
            newton_align(&self.target, &input, &guess, config)
        };
        match outcome {
            Ok(result) => {
                self.previous_delta = self.current_pose.delta_to(&result.pose);
                self.current_pose = result.pose;
                record.pose = result.pose;
                record.iterations = result.iterations;
                record.converged = result.converged;
                record.fitness_score = result.fitness_score;
                record.tp_paper = result.tp_paper;
                record.tp_score = result.tp_score;
                record.breakdown = false;
                let shift = self.current_pose.translation_distance(&self.last_added_pose);
                if shift >= config.min_add_shift {
                    self.add_to_map(&filtered, config);
                    record.added = true;
                }
                debug!(
                    "scan {scan_index}: {} iterations, fitness {:.4}, shift {shift:.3}{}",
                    result.iterations,
                    result.fitness_score,
                    if record.added { ", added" } else { "" }
                );
            }
            Err(Error::Breakdown { iterations, reason, .. }) => {
                warn!("scan {scan_index} skipped: breakdown after {iterations} iterations ({reason})");
                record.iterations = iterations;
            }
            Err(e) => {
                warn!("scan {scan_index} skipped: {e}");
            }
        }
        self.trajectory.push((scan.stamp, self.current_pose));
        self.stats.push(record);
        self.stats.last().expect("just pushed")
    }

    fn add_to_map(&mut self, filtered: &Scan, config: &RunConfig) {
        let placed = transform_scan(filtered, &self.current_pose);
        let new_positions = placed.positions();
        self.map_cloud.points.extend(placed.points);
        self.last_added_pose = self.current_pose;

        let growth = (self.map_cloud.len() - self.built_size) as f64 / self.built_size as f64;
        if growth > config.grid_rebuild_growth {
            let grid = NdGrid::build(&self.map_cloud, config.ndt_resolution, config.min_points_per_voxel)
                .expect("map cloud is non-empty and config was validated");
            self.target = NdtTarget::from_parts(grid, PointIndex::new(self.map_cloud.positions()));
            self.built_size = self.map_cloud.len();
            self.full_rebuilds += 1;
        } else {
            self.target.extend(new_positions);
        }
    }
}

/// Cumulative XY distance travelled against elevation, one entry per pose.
pub fn elevation_series(trajectory: &[StampedPose]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(trajectory.len());
    let mut distance = 0.0;
    for (i, (_, pose)) in trajectory.iter().enumerate() {
        if i > 0 {
            let prev = &trajectory[i - 1].1;
            distance += (pose.x - prev.x).hypot(pose.y - prev.y);
        }
        out.push((distance, pose.z));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_scan, Scene, SensorPreset};
    use nalgebra::Vector3;
    use std::collections::HashMap;

    fn corridor_scan(x: f64) -> Scan {
        let preset = SensorPreset::builtin("VLP-16").unwrap().with_hres(0.4).with_sigma(0.0);
        simulate_scan(&Scene::corridor(20.0), &preset, &Pose6::new(x, 0.0, 0.0, 0.0, 0.0, 0.0), x, 1)
    }

    #[test]
    fn init_places_first_scan_at_identity() {
        let scan = corridor_scan(0.0);
        assert!(scan.len() > 1000);
        let config = RunConfig::default();
        let state = map_init(&scan, &config).unwrap();
        assert_eq!(state.current_pose(), Pose6::IDENTITY);
        assert_eq!(state.trajectory().len(), 1);
        assert_eq!(state.stats().len(), 1);
        assert!(state.stats()[0].added);
        let filtered = range_filter(&scan, config.min_range, config.max_range);
        assert_eq!(state.map_cloud().len(), filtered.len());
        assert_eq!(state.map_cloud().frame_id, "map");
    }

    #[test]
    fn grid_matches_occupied_cell_count() {
        let config = RunConfig::default();
        let scan = corridor_scan(0.0);
        let state = map_init(&scan, &config).unwrap();
        let mut counts: HashMap<(i64, i64, i64), usize> = HashMap::new();
        for p in range_filter(&scan, config.min_range, config.max_range).points {
            *counts
                .entry((p.x.floor() as i64, p.y.floor() as i64, p.z.floor() as i64))
                .or_default() += 1;
        }
        let populated = counts.values().filter(|&&c| c >= config.min_points_per_voxel).count();
        assert_eq!(state.grid().len(), populated);
        assert_eq!(state.grid().occupied_cells(), counts.len());
    }

    #[test]
    fn scan_inside_min_range_is_rejected() {
        let scan = Scan::from_positions((0..100).map(|i| Vector3::new(0.01 * i as f64, 0.5, 0.0)));
        assert!(matches!(map_init(&scan, &RunConfig::default()), Err(Error::EmptyScan(_))));
    }

    #[test]
    fn repeated_scan_is_not_added() {
        let config = RunConfig::default();
        let scan = corridor_scan(0.0);
        let mut state = map_init(&scan, &config).unwrap();
        let size = state.map_cloud().len();
        for _ in 0..4 {
            let record = state.step(&scan, &config).clone();
            assert!(!record.added);
            assert!(!record.breakdown);
            assert!(record.pose.translation_distance(&Pose6::IDENTITY) < 0.01);
        }
        assert_eq!(state.map_cloud().len(), size);
        assert_eq!(state.trajectory().len(), 5);
    }

    #[test]
    fn additions_respect_the_shift_gate() {
        let config = RunConfig::default();
        let positions = [0.0, 0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.1, 2.4];
        let mut state = map_init(&corridor_scan(0.0), &config)
            .unwrap()
            .with_initial_motion(Pose6::new(0.3, 0.0, 0.0, 0.0, 0.0, 0.0));
        let mut last_size = state.map_cloud().len();
        let mut last_added = Pose6::IDENTITY;
        for &x in &positions[1..] {
            let record = state.step(&corridor_scan(x), &config).clone();
            assert!(state.map_cloud().len() >= last_size);
            let shift = record.pose.translation_distance(&last_added);
            assert_eq!(record.added, shift >= config.min_add_shift, "x {x} shift {shift}");
            if record.added {
                last_added = record.pose;
                assert!(state.map_cloud().len() > last_size);
            } else {
                assert_eq!(state.map_cloud().len(), last_size);
            }
            last_size = state.map_cloud().len();
            assert!((record.pose.x - x).abs() < 0.05, "x {x}: {:?}", record.pose);
        }
        assert_eq!(state.last_added_pose(), last_added);
        assert_eq!(state.stats().iter().filter(|r| r.added).count(), 3);
    }

    #[test]
    fn functional_step_matches_method() {
        let config = RunConfig::default();
        let a = map_step(map_init(&corridor_scan(0.0), &config).unwrap(), &corridor_scan(0.2), &config);
        let mut b = map_init(&corridor_scan(0.0), &config).unwrap();
        b.step(&corridor_scan(0.2), &config);
        assert_eq!(a.trajectory(), b.trajectory());
    }

    #[test]
    fn empty_scan_holds_the_pose() {
        let config = RunConfig::default();
        let mut state = map_init(&corridor_scan(0.0), &config).unwrap();
        let record = state.step(&Scan::default(), &config).clone();
        assert!(record.breakdown);
        assert!(!record.is_accepted());
        assert_eq!(record.pose, Pose6::IDENTITY);
        assert_eq!(state.trajectory().len(), 2);
    }

    #[test]
    fn elevation_series_examples() {
        assert_eq!(elevation_series(&[(0.0, Pose6::new(1.0, 2.0, 0.7, 0.0, 0.0, 0.0))]), vec![(0.0, 0.7)]);
        let line: Vec<StampedPose> =
            (0..4).map(|i| (i as f64, Pose6::new(i as f64, 0.0, 0.0, 0.0, 0.0, 0.0))).collect();
        assert_eq!(elevation_series(&line), vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
    }

    #[test]
    fn elevation_series_on_a_helix() {
        let helix: Vec<StampedPose> = (0..200)
            .map(|i| {
                let a = i as f64 * 0.1;
                (a, Pose6::new(5.0 * a.cos(), 5.0 * a.sin(), 0.05 * a, 0.0, 0.0, a))
            })
            .collect();
        let series = elevation_series(&helix);
        // Every chord of the circle subtends 0.1 rad.
        let chord = 2.0 * 5.0 * (0.05_f64).sin();
        for (i, (d, z)) in series.iter().enumerate() {
            assert!((d - chord * i as f64).abs() < 1e-9);
            assert_eq!(*z, helix[i].1.z);
        }
    }
}
