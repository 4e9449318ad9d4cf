//! Output bookkeeping: files written by a run are removed again if the
//! run fails part-way.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use ndt_atlas::Error as CoreError;

use crate::error::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `path` as an output and creates its parent directories.
    pub fn file(&mut self, path: &Path) -> CliResult<PathBuf> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.dir(parent)?;
        }
        self.files.push(path.to_path_buf());
        Ok(path.to_path_buf())
    }

    /// Creates `dir` if needed; directories created here are removed on
    /// failure.
    pub fn dir(&mut self, dir: &Path) -> CliResult<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur.filter(|d| !d.as_os_str().is_empty() && !d.exists()) {
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output(CoreError::io(dir, e)))?;
        // Outermost last, so removal goes innermost first.
        self.dirs.extend(missing);
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            if f.exists() {
                log::info!("removing partial output {}", f.display());
                let _ = std::fs::remove_file(f);
            }
        }
        for d in &self.dirs {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

/// Maps a write failure to the output category.
pub fn written<T>(r: ndt_atlas::Result<T>) -> CliResult<T> {
    r.map_err(CliError::Output)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Output(CoreError::io(path, e)))
}

/// Run identifier derived from everything that determines a run's output.
pub fn run_id(kind: &str, config_text: &str, inputs: &[PathBuf], extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(config_text.as_bytes());
    h.update([0]);
    for p in inputs {
        if let Some(name) = p.file_name() {
            h.update(name.to_string_lossy().as_bytes());
        }
        if let Ok(bytes) = std::fs::read(p) {
            h.update(&bytes);
        }
        h.update([0]);
    }
    h.update(extra.as_bytes());
    let digest = h.finalize();
    format!("{kind}-{}", digest[..8].iter().map(|b| format!("{b:02x}")).collect::<String>())
}
