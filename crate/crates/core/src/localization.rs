//! Scan-by-scan localization against a fixed reference map.
//!
//! Each solution seeds the next alignment. A solution whose translation
//! jump exceeds `error_threshold` beyond the motion the guess already
//! predicted is flagged `rejected` and the previous pose is kept.

use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};

use crate::error::{Error, Result};
use crate::geometry::{Pose6, Scan};
use crate::io::{GuessMode, RunConfig};
use crate::ndt::{newton_align, NdtTarget, RegistrationResult};
use crate::preprocess::{range_filter, voxel_grid_filter};
use crate::report::ScanRecord;

#[derive(Debug, Clone)]
pub struct LocalizerState {
    target: Arc<NdtTarget>,
    current_pose: Pose6,
    previous_delta: Pose6,
    history: Vec<ScanRecord>,
}

/// Builds the reference grid from `map` and starts at `initial_pose`.
pub fn localizer_init(map: &Scan, initial_pose: Pose6, config: &RunConfig) -> Result<LocalizerState> {
    config.validate()?;
    if map.is_empty() {
        return Err(Error::EmptyReference);
    }
    let target = NdtTarget::new(map, config)?;
    Ok(LocalizerState::with_target(Arc::new(target), initial_pose))
}

impl LocalizerState {
    /// A localizer over an already-built reference, which may be shared
    /// with other localizers.
    pub fn with_target(target: Arc<NdtTarget>, initial_pose: Pose6) -> Self {
        Self {
            target,
            current_pose: initial_pose,
            previous_delta: Pose6::IDENTITY,
            history: Vec::new(),
        }
    }

    /// Seeds the constant-velocity guess for the second scan with the
    /// expected motion between the first two scans.
    pub fn with_initial_motion(mut self, delta: Pose6) -> Self {
        self.previous_delta = delta;
        self
    }

    pub fn target(&self) -> &Arc<NdtTarget> {
        &self.target
    }

    pub fn current_pose(&self) -> Pose6 {
        self.current_pose
    }

    pub fn previous_delta(&self) -> Pose6 {
        self.previous_delta
    }

    pub fn history(&self) -> &[ScanRecord] {
        &self.history
    }

    /// Localizes one sensor-frame scan. The returned alignment is `None`
    /// when the scan could not be aligned at all.
    pub fn step(&mut self, scan: &Scan, config: &RunConfig) -> (ScanRecord, Option<RegistrationResult>) {
        let started = Instant::now();
        let scan_index = self.history.len();
        let filtered = range_filter(scan, config.localize_min_range, config.max_range);
        let input = voxel_grid_filter(&filtered, config.voxel_leaf_size);
        let predicted = if scan_index == 0 {
            self.current_pose
        } else {
            self.current_pose.compose(&self.previous_delta)
        };
        let guess = match config.initial_guess {
            GuessMode::ConstantVelocity => predicted,
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
        let result = match outcome {
            Ok(result) => {
                record.iterations = result.iterations;
                record.converged = result.converged;
                record.fitness_score = result.fitness_score;
                record.tp_paper = result.tp_paper;
                record.tp_score = result.tp_score;
                record.breakdown = false;
                let jump = result.pose.translation_distance(&self.current_pose);
                let expected = guess.translation_distance(&self.current_pose);
                if jump > config.error_threshold + expected {
                    info!(
                        "scan {scan_index} rejected: jump {jump:.3} m exceeds {:.3} m",
                        config.error_threshold + expected
                    );
                    record.rejected = true;
                } else {
                    // The first solution corrects the initial pose; it is not motion.
                    if scan_index > 0 {
                        self.previous_delta = self.current_pose.delta_to(&result.pose);
                    }
                    self.current_pose = result.pose;
                    record.pose = result.pose;
                }
                Some(result)
            }
            Err(Error::Breakdown { iterations, reason, .. }) => {
                warn!("scan {scan_index}: breakdown after {iterations} iterations ({reason}); pose held");
                record.iterations = iterations;
                None
            }
            Err(e) => {
                warn!("scan {scan_index}: {e}; pose held");
                None
            }
        };
        record.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        self.history.push(record.clone());
        (record, result)
    }
}

/// Functional form of [`LocalizerState::step`].
pub fn localize_step(
    mut state: LocalizerState,
    scan: &Scan,
    config: &RunConfig,
) -> (LocalizerState, ScanRecord) {
    let (record, _) = state.step(scan, config);
    (state, record)
}
