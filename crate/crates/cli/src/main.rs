//! `ndt-atlas`: simulate drives, build maps, localize against them and
//! score map quality, writing CSV and JSON reports.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndt_atlas::Pose6;

#[derive(Debug, Parser)]
#[command(name = "ndt-atlas", version, about = "NDT mapping, localization and map-quality benchmark")]
pub struct Cli {
    /// Run configuration file (`key = value`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for outputs not given an explicit path.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a drive through a scene into PCD scans plus ground truth.
    Simulate(SimulateArgs),
    /// Range-filter and voxel-filter scans.
    Downsample(DownsampleArgs),
    /// Build a map from a scan sequence.
    Map(MapArgs),
    /// Localize a scan sequence against a map.
    Localize(LocalizeArgs),
    /// Mean map entropy and mean plane variance of a map.
    Quality(QualityArgs),
    /// Summarize per-scan stats CSVs as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene file, `room`, or `corridor[:length]`.
    #[arg(long)]
    pub scene: String,
    /// Built-in preset name or preset file.
    #[arg(long)]
    pub preset: String,
    /// Trajectory CSV (`stamp,x,y,z,roll,pitch,yaw`) of sensor poses.
    #[arg(long, conflicts_with = "line", required_unless_present = "line")]
    pub drive: Option<PathBuf>,
    /// Straight drive along +x instead of a trajectory file: `length,scans[,period]`.
    #[arg(long)]
    pub line: Option<String>,
    /// Override the preset's range noise σ (m).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Override the preset's horizontal resolution (degrees).
    #[arg(long)]
    pub hres: Option<f64>,
    /// Output directory [default: <out-dir>/scans].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DownsampleArgs {
    /// Input scan file or directory of scans.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file (for a file input) or directory [default: <out-dir>/downsampled].
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Voxel leaf (m) [default: config voxel_leaf_size].
    #[arg(long)]
    pub leaf: Option<f64>,
    #[arg(long)]
    pub min_range: Option<f64>,
    #[arg(long)]
    pub max_range: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScanInput {
    /// A directory of `.pcd` scans or one or more scan files, in order.
    #[arg(long, num_args = 1.., required = true)]
    pub scans: Vec<PathBuf>,
    /// Expected motion between the first two scans, `x,y,z,roll,pitch,yaw`.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub initial_motion: Option<Pose6>,
    #[arg(long)]
    pub out_traj: Option<PathBuf>,
    #[arg(long)]
    pub out_stats: Option<PathBuf>,
    /// Run report JSON [default: <out-dir>/report.json].
    #[arg(long)]
    pub out_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub input: ScanInput,
    #[arg(long)]
    pub out_map: Option<PathBuf>,
    /// Label for the elevation series.
    #[arg(long, default_value = "map")]
    pub sensor: String,
    /// Also score the finished map (MME/MPV) into the report.
    #[arg(long)]
    pub quality: bool,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub input: ScanInput,
    /// Reference map PCD.
    #[arg(long)]
    pub map: PathBuf,
    /// Pose of the first scan in the map frame, `x,y,z,roll,pitch,yaw`.
    #[arg(long, value_parser = parse_pose, allow_hyphen_values = true)]
    pub init_pose: Option<Pose6>,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Neighbourhood radius (m) [default: config quality_radius].
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    /// Per-point CSV `x,y,z,entropy,plane_variance`.
    #[arg(long)]
    pub out_points: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-scan stats CSVs; each becomes one row, labelled by file stem.
    #[arg(long, num_args = 1.., required = true)]
    pub stats: Vec<PathBuf>,
    /// Summary CSV [default: <out-dir>/summary.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `x,y,z,roll,pitch,yaw`.
fn parse_pose(text: &str) -> Result<Pose6, String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect::<Result<_, _>>()?;
    let array: [f64; 6] = values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 6 comma-separated values, got {}", v.len()))?;
    let pose = Pose6::from_array(array);
    if pose.is_finite() {
        Ok(pose)
    } else {
        Err("pose values must be finite".into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NDT_ATLAS_LOG", "warn"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
