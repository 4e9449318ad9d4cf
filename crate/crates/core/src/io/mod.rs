//! File formats: PCD scans and maps, trajectory CSV, run configuration.

pub mod config;
pub mod pcd;
pub mod trajectory;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use config::{DerivativeMode, GuessMode, Neighborhood, RunConfig};
pub use pcd::{encode_scan, parse_scan, read_scan, write_scan, PcdEncoding};
pub use trajectory::{read_trajectory, write_trajectory, StampedPose};

/// All `.pcd` files in a directory, sorted by file name.
pub fn list_scan_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pcd")))
        .collect();
    files.sort();
    Ok(files)
}
