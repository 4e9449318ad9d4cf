use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use ndt_atlas::io::trajectory::trajectory_to_string;
use ndt_atlas::io::{list_scan_files, read_scan, read_trajectory, write_scan, PcdEncoding, StampedPose};
use ndt_atlas::localization::localizer_init;
use ndt_atlas::mapping::{elevation_series, map_init};
use ndt_atlas::preprocess::{range_filter, voxel_grid_filter};
use ndt_atlas::quality::{map_quality, write_quality_points, MapQualityReport};
use ndt_atlas::report::{
    aggregate_stats, elevation_to_string, read_stats, stats_to_string, RunReport, ScanRecord, StatsLayout,
    REPORT_SCHEMA_VERSION,
};
use ndt_atlas::simulator::{
    scan_file_name, straight_line_poses, write_drive, GroundTruthDrive, Scene, SensorPreset, GROUND_TRUTH_FILE,
};
use ndt_atlas::{Error as CoreError, Pose6, RunConfig, Scan};

use crate::error::{CliError, CliResult};
use crate::output::{run_id, write_text, written, Outputs};
use crate::{Cli, Command, DownsampleArgs, LocalizeArgs, MapArgs, QualityArgs, ReportArgs, ScanInput, SimulateArgs};

pub fn run(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Simulate(args) => simulate(cli, &config, args),
        Command::Downsample(args) => downsample(cli, &config, args),
        Command::Map(args) => map(cli, &config, args),
        Command::Localize(args) => localize(cli, &config, args),
        Command::Quality(args) => quality(cli, &config, args),
        Command::Report(args) => report(cli, args),
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            CoreError::Io { .. } => CliError::Input(e),
            other => CliError::Config(other),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn generated_at() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

fn or_default(path: &Option<PathBuf>, out_dir: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out_dir.join(name))
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

/// Scan files named on the command line: one directory, or files in order.
fn scan_paths(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let paths = match inputs {
        [dir] if dir.is_dir() => list_scan_files(dir)?,
        files => files.to_vec(),
    };
    if paths.is_empty() {
        return Err(CliError::Usage("no .pcd scans found".into()));
    }
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(CliError::Input(CoreError::io(
            missing,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        )));
    }
    Ok(paths)
}

fn scene(spec: &str) -> CliResult<Scene> {
    match spec.split_once(':') {
        _ if spec == "room" => Ok(Scene::room()),
        _ if spec == "corridor" => Ok(Scene::corridor(50.0)),
        Some(("corridor", length)) => {
            let length: f64 = length
                .parse()
                .map_err(|_| CliError::Usage(format!("bad corridor length `{length}`")))?;
            Ok(Scene::corridor(positive("scene corridor length", length)?))
        }
        _ => Ok(Scene::load(Path::new(spec))?),
    }
}

/// `length,scans[,period]` as evenly spaced poses along +x.
fn line_drive(spec: &str) -> CliResult<Vec<StampedPose>> {
    let bad = || CliError::Usage(format!("--line expects `length,scans[,period]`, got `{spec}`"));
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(bad());
    }
    let length: f64 = parts[0].parse().map_err(|_| bad())?;
    let scans: usize = parts[1].parse().map_err(|_| bad())?;
    let period: f64 = parts.get(2).map_or(Ok(0.1), |p| p.parse()).map_err(|_| bad())?;
    if scans < 2 || !(length.is_finite() && length >= 0.0) {
        return Err(bad());
    }
    let period = positive("line period", period)?;
    let distances: Vec<f64> = (0..scans).map(|k| k as f64 * length / (scans - 1) as f64).collect();
    Ok(straight_line_poses(&distances, period))
}

fn simulate(cli: &Cli, config: &RunConfig, args: &SimulateArgs) -> CliResult<()> {
    let scene = scene(&args.scene)?;
    let mut preset = SensorPreset::resolve(&args.preset)?;
    if let Some(sigma) = args.sigma {
        preset = preset.with_sigma(sigma);
    }
    if let Some(hres) = args.hres {
        preset = preset.with_hres(hres);
    }
    preset.validate()?;
    let poses = match (&args.drive, &args.line) {
        (Some(path), _) => read_trajectory(path)?,
        (None, Some(spec)) => line_drive(spec)?,
        (None, None) => unreachable!("clap requires --drive or --line"),
    };
    if poses.is_empty() {
        return Err(CliError::Usage("drive has no poses".into()));
    }
    let drive = GroundTruthDrive::new(poses, scene, preset, config.seed)?;

    let dir = or_default(&args.out, &cli.out_dir, "scans");
    let mut outputs = Outputs::new();
    outputs.dir(&dir)?;
    for i in 0..drive.poses.len() {
        outputs.file(&dir.join(scan_file_name(i)))?;
    }
    outputs.file(&dir.join(GROUND_TRUTH_FILE))?;
    let paths = written(write_drive(&drive, &dir))?;
    outputs.commit();
    println!(
        "simulated {} scans with {} (seed {}) into {}",
        paths.len(),
        drive.preset.name,
        config.seed,
        dir.display()
    );
    Ok(())
}

fn downsample(cli: &Cli, config: &RunConfig, args: &DownsampleArgs) -> CliResult<()> {
    let leaf = positive("leaf", args.leaf.unwrap_or(config.voxel_leaf_size))?;
    let min_range = args.min_range.unwrap_or(config.localize_min_range);
    let max_range = args.max_range.unwrap_or(config.max_range);
    if !(min_range.is_finite() && min_range >= 0.0 && min_range < max_range) {
        return Err(CliError::Usage(format!(
            "need 0 ≤ --min-range < --max-range, got {min_range} and {max_range}"
        )));
    }
    let jobs: Vec<(PathBuf, PathBuf)> = if args.input.is_dir() {
        let dir = or_default(&args.output, &cli.out_dir, "downsampled");
        scan_paths(std::slice::from_ref(&args.input))?
            .into_iter()
            .map(|p| {
                let out = dir.join(p.file_name().expect("listed files have names"));
                (p, out)
            })
            .collect()
    } else {
        let name = args
            .input
            .file_name()
            .ok_or_else(|| CliError::Usage("--input has no file name".into()))?;
        let out = args.output.clone().unwrap_or_else(|| cli.out_dir.join("downsampled").join(name));
        vec![(args.input.clone(), out)]
    };

    let mut outputs = Outputs::new();
    let (mut before, mut after) = (0, 0);
    for (input, output) in &jobs {
        let scan = read_scan(input)?;
        let reduced = voxel_grid_filter(&range_filter(&scan, min_range, max_range), leaf);
        before += scan.len();
        after += reduced.len();
        let path = outputs.file(output)?;
        written(write_scan(&reduced, &path, PcdEncoding::Binary))?;
    }
    outputs.commit();
    println!("downsampled {} scans: {before} → {after} points (leaf {leaf} m)", jobs.len());
    Ok(())
}

/// Paths shared by `map` and `localize`.
struct RunPaths {
    trajectory: PathBuf,
    stats: PathBuf,
    report: PathBuf,
}

impl RunPaths {
    fn new(input: &ScanInput, out_dir: &Path) -> Self {
        Self {
            trajectory: or_default(&input.out_traj, out_dir, "trajectory.csv"),
            stats: or_default(&input.out_stats, out_dir, "stats.csv"),
            report: or_default(&input.out_report, out_dir, "report.json"),
        }
    }
}

fn run_report(
    kind: &str,
    config: &RunConfig,
    inputs: &[PathBuf],
    extra: &str,
    records: &[ScanRecord],
    n_points_map: usize,
    paths: &RunPaths,
) -> CliResult<RunReport> {
    let id = run_id(kind, &config.to_cfg_string(), inputs, extra);
    RunReport::from_records(
        id,
        kind,
        config,
        records,
        n_points_map,
        &paths.stats,
        &paths.trajectory,
        generated_at(),
    )
    .map_err(CliError::Processing)
}

fn map(cli: &Cli, config: &RunConfig, args: &MapArgs) -> CliResult<()> {
    let scans = scan_paths(&args.input.scans)?;
    let paths = RunPaths::new(&args.input, &cli.out_dir);
    let map_path = or_default(&args.out_map, &cli.out_dir, "map.pcd");
    let elevation_path = cli.out_dir.join("elevation.csv");

    let first = read_scan(&scans[0])?;
    let mut state = map_init(&first, config)?;
    if let Some(motion) = args.input.initial_motion {
        state = state.with_initial_motion(motion);
    }
    for (i, path) in scans.iter().enumerate().skip(1) {
        let scan = read_scan(path)?;
        let record = state.step(&scan, config);
        info!(
            "scan {i}/{}: {} iterations{}",
            scans.len() - 1,
            record.iterations,
            if record.added { ", added" } else { "" }
        );
    }

    let mut report = run_report(
        "map",
        config,
        &scans,
        &format!("{:?}", args.input.initial_motion),
        state.stats(),
        state.map_cloud().len(),
        &paths,
    )?;
    if args.quality {
        let q = map_quality(state.map_cloud(), config.quality_radius)?;
        report.mme = q.mme;
        report.mpv = q.mpv;
    }

    let mut outputs = Outputs::new();
    let map_file = outputs.file(&map_path)?;
    written(write_scan(state.map_cloud(), &map_file, PcdEncoding::Binary))?;
    write_text(&outputs.file(&paths.trajectory)?, &trajectory_to_string(state.trajectory()))?;
    write_text(&outputs.file(&paths.stats)?, &stats_to_string(state.stats(), StatsLayout::Mapping))?;
    write_text(
        &outputs.file(&elevation_path)?,
        &elevation_to_string(&args.sensor, &elevation_series(state.trajectory())),
    )?;
    write_text(&outputs.file(&paths.report)?, &json(&report))?;
    outputs.commit();
    println!(
        "mapped {} scans ({} accepted, {} added): {} map points, mean iterations {:.3}",
        report.n_scans, report.n_accepted, report.n_added, report.n_points_map, report.mean_iterations
    );
    Ok(())
}

fn localize(cli: &Cli, config: &RunConfig, args: &LocalizeArgs) -> CliResult<()> {
    let scans = scan_paths(&args.input.scans)?;
    let paths = RunPaths::new(&args.input, &cli.out_dir);
    let map = read_scan(&args.map)?;
    let initial = args.init_pose.unwrap_or(Pose6::IDENTITY);
    let mut state = localizer_init(&map, initial, config)?;
    if let Some(motion) = args.input.initial_motion {
        state = state.with_initial_motion(motion);
    }
    let mut trajectory = Vec::with_capacity(scans.len());
    for path in &scans {
        let scan = read_scan(path)?;
        let (record, _) = state.step(&scan, config);
        trajectory.push((record.stamp, record.pose));
    }
    let records = state.history();
    let rejected = records.iter().filter(|r| r.rejected).count();
    let breakdowns = records.iter().filter(|r| r.breakdown).count();

    let mut inputs = vec![args.map.clone()];
    inputs.extend(scans.iter().cloned());
    let report = run_report(
        "localize",
        config,
        &inputs,
        &format!("{initial:?} {:?}", args.input.initial_motion),
        records,
        map.len(),
        &paths,
    )?;

    let mut outputs = Outputs::new();
    write_text(&outputs.file(&paths.trajectory)?, &trajectory_to_string(&trajectory))?;
    write_text(&outputs.file(&paths.stats)?, &stats_to_string(records, StatsLayout::Localization))?;
    write_text(&outputs.file(&paths.report)?, &json(&report))?;
    outputs.commit();
    println!(
        "localized {} scans ({rejected} rejected, {breakdowns} failed): mean iterations {:.3}",
        report.n_scans, report.mean_iterations
    );
    Ok(())
}

#[derive(Serialize)]
struct QualityRun<'a> {
    schema_version: u32,
    run_id: String,
    kind: &'static str,
    map: String,
    #[serde(flatten)]
    quality: &'a MapQualityReport,
    generated_at: String,
}

fn quality(cli: &Cli, config: &RunConfig, args: &QualityArgs) -> CliResult<()> {
    let radius = positive("radius", args.radius.unwrap_or(config.quality_radius))?;
    let map: Scan = read_scan(&args.map)?;
    let report = map_quality(&map, radius)?;
    let run = QualityRun {
        schema_version: REPORT_SCHEMA_VERSION,
        run_id: run_id("quality", &radius.to_string(), std::slice::from_ref(&args.map), ""),
        kind: "quality",
        map: args.map.display().to_string(),
        quality: &report,
        generated_at: generated_at(),
    };

    let mut outputs = Outputs::new();
    write_text(&outputs.file(&or_default(&args.out_report, &cli.out_dir, "quality.json"))?, &json(&run))?;
    if let Some(points) = &args.out_points {
        written(write_quality_points(&map, &report, &outputs.file(points)?))?;
    }
    outputs.commit();
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
    println!(
        "MME {} nats, MPV {} m over {} points ({} skipped, radius {radius} m)",
        show(report.mme),
        show(report.mpv),
        report.n_points,
        report.skipped_points
    );
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> CliResult<()> {
    let mut table = String::from(
        "run,n_scans,n_accepted,n_added,mean_iterations,std_iterations,mean_fitness,std_fitness\n",
    );
    for path in &args.stats {
        let records = read_stats(path)?;
        let agg = aggregate_stats(&records).map_err(CliError::Processing)?;
        let label = path.display();
        let _ = writeln!(
            table,
            "{label},{},{},{},{},{},{},{}",
            records.len(),
            agg.n_used,
            records.iter().filter(|r| r.added).count(),
            agg.mean_iterations,
            agg.std_iterations,
            agg.mean_fitness,
            agg.std_fitness
        );
    }
    let mut outputs = Outputs::new();
    write_text(&outputs.file(&or_default(&args.out, &cli.out_dir, "summary.csv"))?, &table)?;
    outputs.commit();
    print!("{table}");
    Ok(())
}
