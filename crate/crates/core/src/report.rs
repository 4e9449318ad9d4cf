//! Per-scan statistics, run aggregates and their file formats.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose6;
use crate::io::RunConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Base stats columns shared by mapping and localization.
pub const STATS_COLUMNS: [&str; 8] = [
    "scan_index",
    "stamp",
    "iterations",
    "fitness_score",
    "tp_paper",
    "tp_score",
    "converged",
    "added",
];

/// Outcome of processing one scan in a mapping or localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_index: usize,
    pub stamp: f64,
    pub pose: Pose6,
    pub iterations: usize,
    pub converged: bool,
    pub fitness_score: f64,
    pub tp_paper: f64,
    pub tp_score: f64,
    /// Mapping: the scan was appended to the map.
    pub added: bool,
    /// Localization: the solution failed the error gate.
    pub rejected: bool,
    /// Alignment failed outright; the pose was held.
    pub breakdown: bool,
    /// Localization: wall-clock time spent on the scan.
    pub wall_ms: Option<f64>,
}

impl ScanRecord {
    /// Whether the scan counts toward run statistics.
    pub fn is_accepted(&self) -> bool {
        !self.rejected && !self.breakdown
    }
}

/// Which optional columns a stats file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsLayout {
    Mapping,
    Localization,
}

pub fn stats_to_string(records: &[ScanRecord], layout: StatsLayout) -> String {
    let mut out = STATS_COLUMNS.join(",");
    out.push_str(",breakdown");
    if layout == StatsLayout::Localization {
        out.push_str(",rejected,wall_ms");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scan_index, r.stamp, r.iterations, r.fitness_score, r.tp_paper, r.tp_score, r.converged, r.added, r.breakdown
        );
        if layout == StatsLayout::Localization {
            let _ = write!(out, ",{},{}", r.rejected, r.wall_ms.unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

pub fn write_stats(records: &[ScanRecord], layout: StatsLayout, path: &Path) -> Result<()> {
    std::fs::write(path, stats_to_string(records, layout)).map_err(|e| Error::io(path, e))
}

/// Reads a stats file back. Poses are not stored in it and come back as
/// identity; missing optional columns take their defaults.
pub fn read_stats(path: &Path) -> Result<Vec<ScanRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stats(&text, path)
}

pub fn parse_stats(text: &str, path: &Path) -> Result<Vec<ScanRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut required = [0usize; 8];
    for (slot, name) in required.iter_mut().zip(STATS_COLUMNS) {
        *slot = column(name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })?;
    }
    let breakdown = column("breakdown");
    let rejected = column("rejected");
    let wall = column("wall_ms");

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let num = |idx: usize| {
            field(idx)
                .parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("non-numeric token `{}`", field(idx))))
        };
        let int = |idx: usize| {
            field(idx)
                .parse::<usize>()
                .map_err(|_| Error::parse(path, line, format!("bad count `{}`", field(idx))))
        };
        let flag = |idx: usize| match field(idx) {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(Error::parse(path, line, format!("bad flag `{other}`"))),
        };
        records.push(ScanRecord {
            scan_index: int(required[0])?,
            stamp: num(required[1])?,
            pose: Pose6::IDENTITY,
            iterations: int(required[2])?,
            fitness_score: num(required[3])?,
            tp_paper: num(required[4])?,
            tp_score: num(required[5])?,
            converged: flag(required[6])?,
            added: flag(required[7])?,
            breakdown: breakdown.map(flag).transpose()?.unwrap_or(false),
            rejected: rejected.map(flag).transpose()?.unwrap_or(false),
            wall_ms: wall.map(num).transpose()?,
        });
    }
    Ok(records)
}

/// Mean and population standard deviation of iterations and fitness
/// score over accepted scans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub mean_fitness: f64,
    pub std_fitness: f64,
    pub n_used: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate_stats(records: &[ScanRecord]) -> Result<AggregateStats> {
    let used: Vec<&ScanRecord> = records.iter().filter(|r| r.is_accepted()).collect();
    if used.is_empty() {
        return Err(Error::InvalidArgument("no accepted scans to aggregate".into()));
    }
    let iterations: Vec<f64> = used.iter().map(|r| r.iterations as f64).collect();
    let fitness: Vec<f64> = used.iter().map(|r| r.fitness_score).collect();
    let (mean_iterations, std_iterations) = mean_std(&iterations);
    let (mean_fitness, std_fitness) = mean_std(&fitness);
    Ok(AggregateStats {
        mean_iterations,
        std_iterations,
        mean_fitness,
        std_fitness,
        n_used: used.len(),
    })
}

/// Summary of one mapping or localization run.
///
/// `drive_seconds` is the span between the first and last scan stamps.
/// Standard deviations are population (divide by n) over accepted scans.
/// `generated_at` is the only field that differs between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub run_id: String,
    pub kind: String,
    pub config: RunConfig,
    pub n_scans: usize,
    pub n_accepted: usize,
    pub n_added: usize,
    pub drive_seconds: f64,
    pub n_points_map: usize,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub mean_fitness: f64,
    pub std_fitness: f64,
    pub std_convention: String,
    pub mme: Option<f64>,
    pub mpv: Option<f64>,
    pub stats_path: String,
    pub trajectory_path: String,
    pub generated_at: String,
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_records(
        run_id: String,
        kind: &str,
        config: &RunConfig,
        records: &[ScanRecord],
        n_points_map: usize,
        stats_path: &Path,
        trajectory_path: &Path,
        generated_at: String,
    ) -> Result<Self> {
        let agg = aggregate_stats(records)?;
        let drive_seconds = match (records.first(), records.last()) {
            (Some(a), Some(b)) => b.stamp - a.stamp,
            _ => 0.0,
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            run_id,
            kind: kind.to_string(),
            config: config.clone(),
            n_scans: records.len(),
            n_accepted: agg.n_used,
            n_added: records.iter().filter(|r| r.added).count(),
            drive_seconds,
            n_points_map,
            mean_iterations: agg.mean_iterations,
            std_iterations: agg.std_iterations,
            mean_fitness: agg.mean_fitness,
            std_fitness: agg.std_fitness,
            std_convention: "population".into(),
            mme: None,
            mpv: None,
            stats_path: stats_path.display().to_string(),
            trajectory_path: trajectory_path.display().to_string(),
            generated_at,
        })
    }
}

/// Elevation series as CSV `sensor,distance,z`.
pub fn elevation_to_string(sensor: &str, series: &[(f64, f64)]) -> String {
    let mut out = String::from("sensor,distance,z\n");
    for (d, z) in series {
        let _ = writeln!(out, "{sensor},{d},{z}");
    }
    out
}
