use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dualhand::container::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::failure::{io_failure, Failure, Outcome};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Index of one command's outputs. Timestamps are the only fields that vary
/// between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub dataset: Option<DatasetRef>,
    pub checkpoints: Vec<String>,
    pub output_dir: PathBuf,
    /// File name (relative to `output_dir`) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn tool_version() -> String {
    format!("dualhand {}", env!("CARGO_PKG_VERSION"))
}

pub fn file_sha256(path: &Path) -> Outcome<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| {
        Failure::Data(format!("cannot read {}: {e}", path.display()))
    })?))
}

/// Collects files written into one output directory.
pub struct Outputs {
    pub dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl Outputs {
    /// Prepares `dir`, refusing to reuse one that already holds a run unless forced.
    pub fn create(dir: &Path, force: bool) -> Outcome<Self> {
        if dir.join(MANIFEST_FILE).exists() && !force {
            return Err(Failure::Data(format!(
                "{} already contains a run; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Outcome {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        self.record(name, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Failure::Data(format!("cannot encode {name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Registers a file that was written by other means.
    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn record_file(&mut self, name: &str) -> Outcome {
        let sha = file_sha256(&self.path(name))?;
        self.artifacts.insert(name.to_string(), sha);
        Ok(())
    }

    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        dataset: Option<DatasetRef>,
        checkpoints: Vec<String>,
        started_unix: u64,
    ) -> Outcome<RunManifest> {
        let manifest = RunManifest {
            tool_version: tool_version(),
            command: command.to_string(),
            config,
            dataset,
            checkpoints,
            output_dir: self.dir.clone(),
            artifacts: self.artifacts,
            started_unix,
            finished_unix: now(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Failure::Data(format!("cannot encode manifest: {e}")))?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
        Ok(manifest)
    }
}

/// Reads a run manifest and checks every listed artifact against its digest.
pub fn load_verified(dir: &Path) -> Outcome<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    for (name, sha) in &manifest.artifacts {
        if &file_sha256(&dir.join(name))? != sha {
            return Err(Failure::Data(format!(
                "{} does not match the digest recorded in {}",
                dir.join(name).display(),
                path.display()
            )));
        }
    }
    Ok(manifest)
}
