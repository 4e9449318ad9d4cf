use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndt-atlas"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn simulate_room(dir: &Path) {
    ok(
        dir,
        &[
            "simulate", "--scene", "room", "--preset", "VLP-16", "--hres", "1", "--sigma", "0", "--line",
            "0.3,4", "--out", "scans",
        ],
    );
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Rows of a CSV file as header-keyed string maps.
fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn map_report_agrees_with_stats_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_room(d);
    assert_eq!(std::fs::read_dir(d.join("scans")).unwrap().count(), 5);

    ok(d, &["map", "--scans", "scans", "--quality"]);
    let report = read_json(&d.join("out/report.json"));
    let rows = csv_rows(&d.join("out/stats.csv"));
    assert_eq!(report["kind"], "map");
    assert_eq!(report["n_scans"].as_u64().unwrap() as usize, rows.len());
    assert_eq!(rows.len(), 4);
    let added = rows.iter().filter(|r| r["added"] == "true").count();
    assert_eq!(report["n_added"].as_u64().unwrap() as usize, added);
    let accepted: Vec<f64> = rows
        .iter()
        .filter(|r| r["breakdown"] == "false")
        .map(|r| r["iterations"].parse().unwrap())
        .collect();
    assert_eq!(report["n_accepted"].as_u64().unwrap() as usize, accepted.len());
    let mean = accepted.iter().sum::<f64>() / accepted.len() as f64;
    assert!((report["mean_iterations"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(report["mme"].is_number());
    assert!(report["mpv"].as_f64().unwrap() >= 0.0);
    assert!((report["drive_seconds"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(csv_rows(&d.join("out/trajectory.csv")).len(), 4);
    assert!(d.join("out/map.pcd").is_file());
    assert!(d.join("out/elevation.csv").is_file());

    let first_stats = std::fs::read(d.join("out/stats.csv")).unwrap();
    let first_map = std::fs::read(d.join("out/map.pcd")).unwrap();
    ok(d, &["map", "--scans", "scans", "--quality"]);
    let mut again = read_json(&d.join("out/report.json"));
    let mut before = report.clone();
    before.as_object_mut().unwrap().remove("generated_at");
    again.as_object_mut().unwrap().remove("generated_at");
    assert_eq!(before, again);
    assert_eq!(first_stats, std::fs::read(d.join("out/stats.csv")).unwrap());
    assert_eq!(first_map, std::fs::read(d.join("out/map.pcd")).unwrap());
}

#[test]
fn localize_against_built_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "simulate", "--scene", "room", "--preset", "Pandar-64", "--hres", "1", "--sigma", "0", "--line",
            "0.3,4", "--out", "scans",
        ],
    );
    std::fs::write(d.join("fine.cfg"), "voxel_leaf_size = 0.5\n").unwrap();
    ok(d, &["--out-dir", "m", "map", "--scans", "scans"]);
    let stdout = ok(
        d,
        &["--config", "fine.cfg", "--out-dir", "l", "localize", "--map", "m/map.pcd", "--scans", "scans"],
    );
    assert!(stdout.contains("0 rejected"), "{stdout}");
    let rows = csv_rows(&d.join("l/stats.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["rejected"] == "false" && r["breakdown"] == "false"));
    let report = read_json(&d.join("l/report.json"));
    assert_eq!(report["kind"], "localize");
    assert_eq!(report["n_accepted"], 4);

    let truth = csv_rows(&d.join("scans/ground_truth.csv"));
    let estimate = csv_rows(&d.join("l/trajectory.csv"));
    for (t, e) in truth.iter().zip(&estimate) {
        let dx: f64 = t["x"].parse::<f64>().unwrap() - e["x"].parse::<f64>().unwrap();
        assert!(dx.abs() < 0.01, "x error {dx}");
    }
}

#[test]
fn quality_of_a_flat_plane() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut pcd = String::from("VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n");
    let n = 40;
    pcd += &format!("WIDTH {}\nHEIGHT 1\nPOINTS {}\nDATA ascii\n", n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            pcd += &format!("{} {} 0\n", i as f64 * 0.1, j as f64 * 0.1);
        }
    }
    std::fs::write(d.join("plane.pcd"), pcd).unwrap();
    ok(d, &["quality", "--map", "plane.pcd", "--radius", "0.3", "--out-points", "q.csv"]);
    let report = read_json(&d.join("out/quality.json"));
    assert_eq!(report["kind"], "quality");
    assert!(report["mpv"].as_f64().unwrap() < 1e-9);
    assert_eq!(csv_rows(&d.join("q.csv")).len(), n * n);
}

#[test]
fn invalid_config_lists_every_problem_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_room(d);
    std::fs::write(
        d.join("bad.cfg"),
        "ndt_resolution = -1\nmax_iterations = 0\nnot_a_key = 3\n",
    )
    .unwrap();
    let out = cli(d, &["--config", "bad.cfg", "--out-dir", "fresh", "map", "--scans", "scans"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for key in ["ndt_resolution", "max_iterations", "not_a_key"] {
        assert!(stderr.contains(key), "{key} missing from: {stderr}");
    }
    assert!(!d.join("fresh").exists());
}

#[test]
fn failures_map_to_exit_categories() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = cli(d, &["--out-dir", "o", "map", "--scans", "nope.pcd"]);
    assert_eq!(missing.status.code(), Some(4));
    assert!(!d.join("o").exists());

    simulate_room(d);
    let bad_leaf = cli(d, &["downsample", "--input", "scans", "--leaf", "0"]);
    assert_eq!(bad_leaf.status.code(), Some(2));
    let bad_line = cli(d, &["simulate", "--scene", "room", "--line", "1"]);
    assert_eq!(bad_line.status.code(), Some(2));
}

#[test]
fn downsample_single_file_shrinks_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate_room(d);
    let stdout = ok(
        d,
        &["downsample", "--input", "scans/scan_00000.pcd", "--output", "small.pcd", "--leaf", "1"],
    );
    let counts: Vec<usize> = stdout
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|t| t.parse().ok())
        .collect();
    assert!(counts[1] > counts[2] && counts[2] > 0, "{stdout}");
    assert!(d.join("small.pcd").is_file());
}
