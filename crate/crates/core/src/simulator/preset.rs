//! Multi-beam LiDAR sensor descriptions.
//!
//! Built-in presets follow the manufacturer figures for ten common sensors.
//! Beams are spread uniformly over the vertical field of view; `vres_deg`
//! records the finest spacing the real sensor has and is kept for reference.
//! Precision is a single σ per sensor even where the datasheet gives a
//! range-dependent schedule (Ouster and Robosense quote tighter figures at
//! short range).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal step used by all presets unless overridden.
pub const DEFAULT_HRES_DEG: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPreset {
    pub name: String,
    pub channels: usize,
    pub vfov_deg: f64,
    pub vres_deg: f64,
    pub hres_deg: f64,
    pub max_range: f64,
    pub min_range: f64,
    pub range_sigma: f64,
    /// Elevation of the centre of the vertical field of view.
    pub vfov_center_deg: f64,
    /// Explicit per-channel elevations; overrides the uniform spread.
    pub elevations_deg: Option<Vec<f64>>,
}

struct Row {
    name: &'static str,
    channels: usize,
    vfov: f64,
    vres: f64,
    max_range: f64,
    min_range: f64,
    sigma: f64,
}

const TABLE: &[Row] = &[
    Row { name: "VLS-128AP", channels: 128, vfov: 40.0, vres: 0.11, max_range: 245.0, min_range: 1.0, sigma: 0.03 },
    Row { name: "VLS-128", channels: 128, vfov: 40.0, vres: 0.11, max_range: 300.0, min_range: 1.0, sigma: 0.03 },
    Row { name: "HDL-64S2", channels: 64, vfov: 26.9, vres: 0.33, max_range: 120.0, min_range: 3.0, sigma: 0.02 },
    Row { name: "HDL-32E", channels: 32, vfov: 41.33, vres: 1.33, max_range: 100.0, min_range: 2.0, sigma: 0.02 },
    Row { name: "VLP-32C", channels: 32, vfov: 40.0, vres: 0.33, max_range: 200.0, min_range: 1.0, sigma: 0.03 },
    Row { name: "VLP-16", channels: 16, vfov: 30.0, vres: 2.0, max_range: 100.0, min_range: 1.0, sigma: 0.03 },
    Row { name: "Pandar-64", channels: 64, vfov: 40.0, vres: 0.167, max_range: 200.0, min_range: 0.3, sigma: 0.02 },
    Row { name: "Pandar-40P", channels: 40, vfov: 40.0, vres: 0.33, max_range: 200.0, min_range: 0.3, sigma: 0.02 },
    Row { name: "OS1-64", channels: 64, vfov: 33.2, vres: 0.526, max_range: 120.0, min_range: 0.8, sigma: 0.03 },
    Row { name: "RS-Lidar32", channels: 32, vfov: 40.0, vres: 0.33, max_range: 200.0, min_range: 0.4, sigma: 0.03 },
];

impl SensorPreset {
    /// Names of the built-in presets.
    pub fn names() -> Vec<&'static str> {
        TABLE.iter().map(|r| r.name).collect()
    }

    /// Built-in preset by name, case-insensitive.
    pub fn builtin(name: &str) -> Option<Self> {
        TABLE
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
            .map(|r| Self {
                name: r.name.to_string(),
                channels: r.channels,
                vfov_deg: r.vfov,
                vres_deg: r.vres,
                hres_deg: DEFAULT_HRES_DEG,
                max_range: r.max_range,
                min_range: r.min_range,
                range_sigma: r.sigma,
                vfov_center_deg: 0.0,
                elevations_deg: None,
            })
    }

    pub fn with_hres(mut self, hres_deg: f64) -> Self {
        self.hres_deg = hres_deg;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.range_sigma = sigma;
        self
    }

    /// Beam elevations in degrees, lowest first.
    pub fn elevations(&self) -> Vec<f64> {
        if let Some(e) = &self.elevations_deg {
            return e.clone();
        }
        if self.channels == 1 {
            return vec![self.vfov_center_deg];
        }
        let step = self.vfov_deg / (self.channels - 1) as f64;
        let low = self.vfov_center_deg - self.vfov_deg / 2.0;
        (0..self.channels).map(|i| low + step * i as f64).collect()
    }

    /// Azimuth steps per revolution.
    pub fn azimuth_steps(&self) -> usize {
        (360.0 / self.hres_deg).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.channels == 0 {
            problems.push("channels must be at least 1".to_string());
        }
        for (key, v) in [
            ("vfov_deg", self.vfov_deg),
            ("hres_deg", self.hres_deg),
            ("max_range", self.max_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{key} must be positive"));
            }
        }
        if !(self.vres_deg.is_finite() && self.vres_deg >= 0.0) {
            problems.push("vres_deg must be non-negative".into());
        }
        if !(self.min_range.is_finite() && self.min_range >= 0.0 && self.min_range < self.max_range) {
            problems.push("min_range must be non-negative and below max_range".into());
        }
        if !(self.range_sigma.is_finite() && self.range_sigma >= 0.0) {
            problems.push("range_sigma must be non-negative".into());
        }
        if self.channels > 1 && self.vres_deg * (self.channels - 1) as f64 > self.vfov_deg + 1e-9 {
            problems.push(format!(
                "vres_deg × (channels − 1) = {} exceeds vfov_deg {}",
                self.vres_deg * (self.channels - 1) as f64,
                self.vfov_deg
            ));
        }
        if let Some(e) = &self.elevations_deg {
            if e.len() != self.channels {
                problems.push(format!("{} elevations given for {} channels", e.len(), self.channels));
            }
            if e.iter().any(|v| !v.is_finite() || v.abs() > 90.0) {
                problems.push("elevations must lie in [-90, 90] degrees".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("preset {}: {}", self.name, problems.join("; "))))
        }
    }

    /// Reads a `key = value` preset file. Keys: name, channels, vfov_deg,
    /// vres_deg, hres_deg, max_range, min_range, range_sigma,
    /// vfov_center_deg, elevations_deg (comma list). `base = <builtin>`
    /// starts from a built-in preset.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut preset = Self {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".into()),
            channels: 0,
            vfov_deg: 0.0,
            vres_deg: 0.0,
            hres_deg: DEFAULT_HRES_DEG,
            max_range: 0.0,
            min_range: 0.0,
            range_sigma: 0.0,
            vfov_center_deg: 0.0,
            elevations_deg: None,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("{key}: non-numeric value `{value}`")))
            };
            match key {
                "base" => {
                    let name = preset.name.clone();
                    preset = Self::builtin(value)
                        .ok_or_else(|| Error::parse(path, lineno, format!("unknown base preset `{value}`")))?;
                    preset.name = name;
                }
                "name" => preset.name = value.to_string(),
                "channels" => {
                    preset.channels = value
                        .parse()
                        .map_err(|_| Error::parse(path, lineno, format!("channels: bad count `{value}`")))?
                }
                "vfov_deg" => preset.vfov_deg = num()?,
                "vres_deg" => preset.vres_deg = num()?,
                "hres_deg" => preset.hres_deg = num()?,
                "max_range" => preset.max_range = num()?,
                "min_range" => preset.min_range = num()?,
                "range_sigma" => preset.range_sigma = num()?,
                "vfov_center_deg" => preset.vfov_center_deg = num()?,
                "elevations_deg" => {
                    let list = value
                        .split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::parse(path, lineno, format!("elevations_deg: bad value `{t}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    preset.elevations_deg = Some(list);
                }
                other => return Err(Error::parse(path, lineno, format!("unknown key `{other}`"))),
            }
        }
        preset.validate()?;
        Ok(preset)
    }

    /// Built-in name or path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::load(path);
        }
        Err(Error::InvalidArgument(format!(
            "unknown preset `{name_or_path}` (built-ins: {})",
            Self::names().join(", ")
        )))
    }
}
