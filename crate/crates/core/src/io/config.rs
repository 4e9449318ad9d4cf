//! Flat `key = value` run configuration.
//!
//! Every key is optional. An empty file yields the reference protocol:
//! 1 m NDT cells, 50 iterations, 3–200 m mapping range gate, 1 m minimum
//! shift between map additions, 2 m localization voxel filter and a 1 m
//! localization error gate.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, Error, Result};

/// Which ND voxels contribute to a transformed point's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    /// Only the voxel containing the point.
    Single,
    /// Sum over the 3×3×3 block of voxels around the containing one.
    Block27,
}

/// How the next alignment is seeded from the pose history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessMode {
    /// Previous pose composed with the previous inter-scan motion.
    ConstantVelocity,
    /// Previous pose only.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Analytic,
    /// Central differences of the objective; slow, for debugging only.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// ND voxel edge length (m).
    pub ndt_resolution: f64,
    pub max_iterations: usize,
    /// Mapping range gate (m).
    pub min_range: f64,
    pub max_range: f64,
    /// Localization minimum range (m); 0 disables the lower gate.
    pub localize_min_range: f64,
    /// Localization input voxel filter leaf (m).
    pub voxel_leaf_size: f64,
    /// Mapping input voxel filter leaf (m).
    pub map_leaf_size: f64,
    pub min_add_shift: f64,
    pub error_threshold: f64,
    pub quality_radius: f64,
    pub seed: u64,
    pub min_points_per_voxel: usize,
    /// Newton convergence threshold, applied to both the translation (m)
    /// and rotation (rad) parts of the update.
    pub transformation_epsilon: f64,
    pub max_step_translation: f64,
    pub max_step_rotation: f64,
    /// Nearest-neighbour distance cap for the fitness score; `None` means
    /// "same as `ndt_resolution`".
    pub fitness_cap: Option<f64>,
    pub neighborhood: Neighborhood,
    pub initial_guess: GuessMode,
    pub derivatives: DerivativeMode,
    /// Relative growth of the map since the last full grid build beyond
    /// which the grid is rebuilt instead of updated in place.
    pub grid_rebuild_growth: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ndt_resolution: 1.0,
            max_iterations: 50,
            min_range: 3.0,
            max_range: 200.0,
            localize_min_range: 0.0,
            voxel_leaf_size: 2.0,
            map_leaf_size: 0.5,
            min_add_shift: 1.0,
            error_threshold: 1.0,
            quality_radius: 1.0,
            seed: 0,
            min_points_per_voxel: 6,
            transformation_epsilon: 1e-3,
            max_step_translation: 1.0,
            max_step_rotation: 0.2,
            fitness_cap: None,
            neighborhood: Neighborhood::Single,
            initial_guess: GuessMode::ConstantVelocity,
            derivatives: DerivativeMode::Analytic,
            grid_rebuild_growth: 0.2,
        }
    }
}

const KEYS: &[&str] = &[
    "ndt_resolution",
    "max_iterations",
    "min_range",
    "max_range",
    "localize_min_range",
    "voxel_leaf_size",
    "map_leaf_size",
    "min_add_shift",
    "error_threshold",
    "quality_radius",
    "seed",
    "min_points_per_voxel",
    "transformation_epsilon",
    "max_step_translation",
    "max_step_rotation",
    "fitness_cap",
    "neighborhood",
    "initial_guess",
    "derivatives",
    "grid_rebuild_growth",
];

fn parse_value<T: FromStr>(key: &str, value: &str, issues: &mut Vec<ConfigIssue>) -> Option<T> {
    match value.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            issues.push(ConfigIssue {
                key: key.to_string(),
                message: format!("cannot parse `{value}`"),
            });
            None
        }
    }
}

impl RunConfig {
    pub fn fitness_cap(&self) -> f64 {
        self.fitness_cap.unwrap_or(self.ndt_resolution)
    }

    /// Parse a configuration text and validate it. Every offending key is
    /// reported, not just the first one.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut issues = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                issues.push(ConfigIssue {
                    key: format!("line {}", lineno + 1),
                    message: format!("expected `key = value`, got `{line}`"),
                });
                continue;
            };
            cfg.set(key.trim(), value.trim(), &mut issues);
        }
        issues.extend(cfg.issues());
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(issues))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply a single `key = value` override.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let mut issues = Vec::new();
        self.set(key, value, &mut issues);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    fn set(&mut self, key: &str, value: &str, issues: &mut Vec<ConfigIssue>) {
        macro_rules! assign {
            ($field:ident) => {
                if let Some(v) = parse_value(key, value, issues) {
                    self.$field = v;
                }
            };
        }
        match key {
            "ndt_resolution" => assign!(ndt_resolution),
            "max_iterations" => assign!(max_iterations),
            "min_range" => assign!(min_range),
            "max_range" => assign!(max_range),
            "localize_min_range" => assign!(localize_min_range),
            "voxel_leaf_size" => assign!(voxel_leaf_size),
            "map_leaf_size" => assign!(map_leaf_size),
            "min_add_shift" => assign!(min_add_shift),
            "error_threshold" => assign!(error_threshold),
            "quality_radius" => assign!(quality_radius),
            "seed" => assign!(seed),
            "min_points_per_voxel" => assign!(min_points_per_voxel),
            "transformation_epsilon" => assign!(transformation_epsilon),
            "max_step_translation" => assign!(max_step_translation),
            "max_step_rotation" => assign!(max_step_rotation),
            "grid_rebuild_growth" => assign!(grid_rebuild_growth),
            "fitness_cap" => {
                if value.eq_ignore_ascii_case("auto") {
                    self.fitness_cap = None;
                } else if let Some(v) = parse_value(key, value, issues) {
                    self.fitness_cap = Some(v);
                }
            }
            "neighborhood" => match value {
                "single" => self.neighborhood = Neighborhood::Single,
                "block27" => self.neighborhood = Neighborhood::Block27,
                _ => issues.push(ConfigIssue {
                    key: key.into(),
                    message: format!("expected `single` or `block27`, got `{value}`"),
                }),
            },
            "initial_guess" => match value {
                "constant_velocity" => self.initial_guess = GuessMode::ConstantVelocity,
                "static" => self.initial_guess = GuessMode::Static,
                _ => issues.push(ConfigIssue {
                    key: key.into(),
                    message: format!("expected `constant_velocity` or `static`, got `{value}`"),
                }),
            },
            "derivatives" => match value {
                "analytic" => self.derivatives = DerivativeMode::Analytic,
                "finite_difference" => self.derivatives = DerivativeMode::FiniteDifference,
                _ => issues.push(ConfigIssue {
                    key: key.into(),
                    message: format!("expected `analytic` or `finite_difference`, got `{value}`"),
                }),
            },
            _ => issues.push(ConfigIssue {
                key: key.into(),
                message: "unknown key".into(),
            }),
        }
    }

    /// All invariant violations of the current values.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut positive = |key: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                issues.push(ConfigIssue {
                    key: key.into(),
                    message: format!("must be a positive length, got {v}"),
                });
            }
        };
        positive("ndt_resolution", self.ndt_resolution);
        positive("max_range", self.max_range);
        positive("voxel_leaf_size", self.voxel_leaf_size);
        positive("map_leaf_size", self.map_leaf_size);
        positive("min_add_shift", self.min_add_shift);
        positive("error_threshold", self.error_threshold);
        positive("quality_radius", self.quality_radius);
        positive("transformation_epsilon", self.transformation_epsilon);
        positive("max_step_translation", self.max_step_translation);
        positive("max_step_rotation", self.max_step_rotation);
        positive("min_range", self.min_range);
        if let Some(cap) = self.fitness_cap {
            positive("fitness_cap", cap);
        }
        if !(self.localize_min_range.is_finite() && self.localize_min_range >= 0.0) {
            issues.push(ConfigIssue {
                key: "localize_min_range".into(),
                message: format!("must be non-negative, got {}", self.localize_min_range),
            });
        }
        if self.max_range <= self.min_range {
            issues.push(ConfigIssue {
                key: "max_range".into(),
                message: format!(
                    "must exceed min_range ({} <= {})",
                    self.max_range, self.min_range
                ),
            });
        }
        if self.max_range <= self.localize_min_range {
            issues.push(ConfigIssue {
                key: "localize_min_range".into(),
                message: "must be below max_range".into(),
            });
        }
        if self.max_iterations < 1 {
            issues.push(ConfigIssue {
                key: "max_iterations".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.min_points_per_voxel < 4 {
            issues.push(ConfigIssue {
                key: "min_points_per_voxel".into(),
                message: "must be at least 4".into(),
            });
        }
        if !(self.grid_rebuild_growth.is_finite() && self.grid_rebuild_growth >= 0.0) {
            issues.push(ConfigIssue {
                key: "grid_rebuild_growth".into(),
                message: "must be non-negative".into(),
            });
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }

    /// Render in the same `key = value` format `parse` reads.
    pub fn to_cfg_string(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let value = match *key {
                "ndt_resolution" => self.ndt_resolution.to_string(),
                "max_iterations" => self.max_iterations.to_string(),
                "min_range" => self.min_range.to_string(),
                "max_range" => self.max_range.to_string(),
                "localize_min_range" => self.localize_min_range.to_string(),
                "voxel_leaf_size" => self.voxel_leaf_size.to_string(),
                "map_leaf_size" => self.map_leaf_size.to_string(),
                "min_add_shift" => self.min_add_shift.to_string(),
                "error_threshold" => self.error_threshold.to_string(),
                "quality_radius" => self.quality_radius.to_string(),
                "seed" => self.seed.to_string(),
                "min_points_per_voxel" => self.min_points_per_voxel.to_string(),
                "transformation_epsilon" => self.transformation_epsilon.to_string(),
                "max_step_translation" => self.max_step_translation.to_string(),
                "max_step_rotation" => self.max_step_rotation.to_string(),
                "fitness_cap" => self
                    .fitness_cap
                    .map_or_else(|| "auto".to_string(), |v| v.to_string()),
                "neighborhood" => match self.neighborhood {
                    Neighborhood::Single => "single".into(),
                    Neighborhood::Block27 => "block27".into(),
                },
                "initial_guess" => match self.initial_guess {
                    GuessMode::ConstantVelocity => "constant_velocity".into(),
                    GuessMode::Static => "static".into(),
                },
                "derivatives" => match self.derivatives {
                    DerivativeMode::Analytic => "analytic".into(),
                    DerivativeMode::FiniteDifference => "finite_difference".into(),
                },
                "grid_rebuild_growth" => self.grid_rebuild_growth.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_cfg_string()).map_err(|e| Error::io(path, e))
    }
}
