//! Output directory with atomic writes and a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub struct OutputDir {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    seeds: &'a BTreeMap<String, u64>,
    artifacts: &'a BTreeMap<String, String>,
}

/// Write through a temporary sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path.file_name().ok_or_else(|| CliError::Internal(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Internal(format!("cannot move {} into place: {e}", path.display())))?;
    Ok(())
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.artifacts.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self, command: &str, config: &RunConfig, seeds: &BTreeMap<String, u64>) -> Result<(), CliError> {
        let m = Manifest {
            manifest_version: 1,
            tool: "umoe",
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            seeds,
            artifacts: &self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())
    }
}
