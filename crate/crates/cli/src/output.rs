//! Atomic artifact writes: every file goes to a temporary sibling first
//! and is renamed into place once complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(path: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&path).map_err(|e| io_err(&path, e))?;
        Ok(RunDir { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes `name` through `fill`, replacing any previous file atomically.
    pub fn write_with<F>(&self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| io_err(&self.path.join(name), e))?;
        self.write_bytes(name, &buf)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path.join(name);
        let tmp = self.path.join(format!(".{name}.tmp"));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        })();
        result.map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_err(&target, e)
        })
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("cannot encode {name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
