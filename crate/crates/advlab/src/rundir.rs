//! Run-directory layout and effective-config snapshotting.
//!
//! Every command writes its outputs under `runs/<run-id>/` with a pinned
//! copy of the effective configuration. A non-empty run directory is never
//! reused without an explicit overwrite flag.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{AdvError, Result};

/// Handle to a prepared run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates (or reuses, with `overwrite`) the run directory. Refuses a
    /// non-empty directory unless `overwrite` is set.
    pub fn create(root: &Path, overwrite: bool) -> Result<Self> {
        if root.exists() {
            let non_empty = std::fs::read_dir(root)?.next().is_some();
            if non_empty && !overwrite {
                return Err(AdvError::Config(format!(
                    "run directory {} is not empty; pass --overwrite to reuse it",
                    root.display()
                )));
            }
        }
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Subdirectory, created on demand.
    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(name);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Writes the merged effective configuration as pretty JSON.
    pub fn write_effective_config<C: Serialize>(&self, config: &C) -> Result<()> {
        let path = self.root.join("effective-config.json");
        let mut text = serde_json::to_string_pretty(config)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_non_empty_dir_without_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run1");
        std::fs::create_dir_all(&run).unwrap();
        std::fs::write(run.join("leftover.txt"), "x").unwrap();
        assert!(RunDir::create(&run, false).is_err());
        assert!(RunDir::create(&run, true).is_ok());
    }

    #[test]
    fn writes_effective_config() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(&dir.path().join("run2"), false).unwrap();
        #[derive(Serialize)]
        struct Cfg {
            seed: u64,
        }
        run.write_effective_config(&Cfg { seed: 9 }).unwrap();
        let text = std::fs::read_to_string(run.path("effective-config.json")).unwrap();
        assert!(text.contains("\"seed\": 9"));
    }
}
