//! Run directories: everything is written into a hidden staging directory
//! next to the target, which is renamed into place only when the command
//! succeeds. A failed run leaves nothing behind.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use cgl_core::tensor_io::{write_axt, AxtTensor};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Version tag stored in every `config.json`.
pub const FORMAT_VERSION: &str = "cgl-run/1";

pub struct RunDir {
    staging: PathBuf,
    target: PathBuf,
    finished: bool,
}

impl RunDir {
    pub fn create(target: &Path) -> CliResult<Self> {
        if target.exists() {
            return Err(CliError::invalid(format!("output directory {} already exists", target.display())));
        }
        let name = target
            .file_name()
            .ok_or_else(|| CliError::invalid(format!("bad output directory {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&parent, e))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| CliError::io(&staging, e))?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            finished: false,
        })
    }

    /// Path of `name` inside the (staging) run directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::invalid(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_csv<R, C>(&self, name: &str, header: &[&str], rows: R) -> CliResult<()>
    where
        R: IntoIterator<Item = Vec<C>>,
        C: Display,
    {
        let mut out = header.join(",");
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        self.write_text(name, &out)
    }

    pub fn write_axt(&self, name: &str, tensor: &AxtTensor) -> CliResult<()> {
        Ok(write_axt(tensor, self.path(name))?)
    }

    /// Move the staging directory into place.
    pub fn finish(mut self) -> CliResult<PathBuf> {
        if self.target.exists() {
            return Err(CliError::invalid(format!("output directory {} appeared during the run", self.target.display())));
        }
        fs::rename(&self.staging, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        self.finished = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_run_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("run");
        {
            let run = RunDir::create(&target).unwrap();
            run.write_text("a.txt", "x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
    }

    #[test]
    fn finished_run_is_renamed_into_place() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("run");
        let run = RunDir::create(&target).unwrap();
        run.write_csv("t.csv", &["a", "b"], [vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(run.finish().unwrap(), target);
        assert_eq!(std::fs::read_to_string(target.join("t.csv")).unwrap(), "a,b\n1,2\n3,4\n");
        assert!(RunDir::create(&target).is_err());
    }
}
