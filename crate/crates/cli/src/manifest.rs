//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub seed: u64,
    /// Full resolved configuration in TOML form.
    pub config: String,
    /// Named inputs (checkpoint paths, record files, model ids).
    pub inputs: BTreeMap<String, String>,
    /// Artifact paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stages: BTreeMap<String, bool>,
    pub summary: serde_json::Value,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Content id of a run: the command, its resolved configuration and its
/// inputs. Worker count and output location do not enter the id.
pub fn run_id(command: &str, config: &ExperimentConfig, inputs: &BTreeMap<String, String>) -> String {
    let mut normalized = config.clone();
    normalized.workers = 1;
    normalized.out_dir = PathBuf::new();
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(command.as_bytes());
    hasher.update(&[0]);
    hasher.update(normalized.to_toml().as_bytes());
    for (k, v) in inputs {
        hasher.update(&[0]);
        hasher.update(k.as_bytes());
        hasher.update(&[0]);
        hasher.update(v.as_bytes());
    }
    format!("{:08x}", hasher.finalize())
}

/// Creates `parent/<name>`, or `parent/<name>-2`, `-3`, ... when taken, so
/// an existing run is never written into.
pub fn fresh_dir(parent: &Path, name: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(parent)?;
    for n in 1.. {
        let dir = if n == 1 {
            parent.join(name)
        } else {
            parent.join(format!("{name}-{n}"))
        };
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, inputs: BTreeMap<String, String>) -> Self {
        Self {
            run_id: run_id(command, config, &inputs),
            command: command.to_string(),
            seed: config.seed,
            config: config.to_toml(),
            inputs,
            artifacts: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            stages: BTreeMap::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn write(&mut self, dir: &Path) -> CliResult<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Records an artifact under `dir`, stored relative to it.
    pub fn add_artifact(&mut self, dir: &Path, path: &Path) {
        let rel = path.strip_prefix(dir).unwrap_or(path);
        self.artifacts.push(rel.to_string_lossy().into_owned());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    #[test]
    fn run_id_ignores_workers_and_output() {
        let a = ExperimentConfig::preset(Preset::Desk);
        let mut b = a.clone();
        b.workers = 4;
        b.out_dir = "elsewhere".into();
        let none = BTreeMap::new();
        assert_eq!(run_id("train", &a, &none), run_id("train", &b, &none));
        assert_ne!(run_id("train", &a, &none), run_id("sweep", &a, &none));
        b.seed = 1;
        assert_ne!(run_id("train", &a, &none), run_id("train", &b, &none));
        let inputs = BTreeMap::from([("model_id".to_string(), "abc".to_string())]);
        assert_ne!(run_id("sweep", &a, &none), run_id("sweep", &a, &inputs));
    }

    #[test]
    fn directories_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let a = fresh_dir(tmp.path(), "x").unwrap();
        let b = fresh_dir(tmp.path(), "x").unwrap();
        let c = fresh_dir(tmp.path(), "x").unwrap();
        assert_eq!(
            (a.file_name().unwrap(), b.file_name().unwrap(), c.file_name().unwrap()),
            ("x".as_ref(), "x-2".as_ref(), "x-3".as_ref())
        );
    }
}
