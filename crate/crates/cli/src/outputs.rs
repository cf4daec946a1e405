//! Tracks files and directories a command creates so that a failed run
//! leaves nothing half-written behind.

use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Default)]
pub struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    /// Registers `path` for removal on failure if it does not exist yet.
    /// Missing parent directories are registered too.
    pub fn claim(&mut self, path: &Path) -> PathBuf {
        let mut missing = Vec::new();
        let mut cur = Some(path);
        while let Some(p) = cur {
            if p.as_os_str().is_empty() || p.exists() {
                break;
            }
            missing.push(p.to_path_buf());
            cur = p.parent();
        }
        self.created.extend(missing.into_iter().rev());
        path.to_path_buf()
    }

    /// Removes every claimed path, newest first.
    pub fn discard(self) {
        for p in self.created.iter().rev() {
            let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
        }
    }
}
