//! Trajectory CSV: header `stamp,x,y,z,roll,pitch,yaw`, one pose per row.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose6;

pub const TRAJECTORY_COLUMNS: [&str; 7] = ["stamp", "x", "y", "z", "roll", "pitch", "yaw"];

/// A timestamped pose.
pub type StampedPose = (f64, Pose6);

pub fn trajectory_to_string(seq: &[StampedPose]) -> String {
    let mut s = TRAJECTORY_COLUMNS.join(",");
    s.push('\n');
    for (stamp, p) in seq {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            stamp, p.x, p.y, p.z, p.roll, p.pitch, p.yaw
        ));
    }
    s
}

pub fn write_trajectory(seq: &[StampedPose], path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_to_string(seq)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, path)
}

/// Columns are located by header name, so their order does not matter and
/// extra columns are ignored.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<StampedPose>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(TRAJECTORY_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })?;
    }
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let mut v = [0.0f64; 7];
        for (k, &col) in idx.iter().enumerate() {
            let tok = record
                .get(col)
                .ok_or_else(|| Error::parse(path, line, format!("missing value for `{}`", TRAJECTORY_COLUMNS[k])))?;
            v[k] = tok
                .parse()
                .map_err(|_| Error::parse(path, line, format!("non-numeric token `{tok}`")))?;
        }
        out.push((v[0], Pose6::new(v[1], v[2], v[3], v[4], v[5], v[6])));
    }
    Ok(out)
}
