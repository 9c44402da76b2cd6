//! Append-only JSON-lines records: one manifest per run, one metrics record
//! per epoch or ablation run.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use super::CliError;

/// Identifies the build that produced a record. Overridable at compile time
/// through `MELMO_BUILD_ID` (for example with `git describe` output).
pub const BUILD_ID: &str = match option_env!("MELMO_BUILD_ID") {
    Some(id) => id,
    None => concat!("melmo-", env!("CARGO_PKG_VERSION")),
};

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Keys: `command`, `status`, `config` (resolved flags), `seed`, `paths`,
/// `build`, `started_unix`, `finished_unix`, `metrics`. Wall-clock quantities
/// are kept out of `metrics` so two runs differ only in the timestamps.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub paths: BTreeMap<String, PathBuf>,
    pub build: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub metrics: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn start(command: &str, config: Value) -> Self {
        Self {
            command: command.into(),
            status: "running".into(),
            config,
            seed: None,
            paths: BTreeMap::new(),
            build: BUILD_ID.into(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            metrics: BTreeMap::new(),
        }
    }

    pub fn path(&mut self, role: &str, p: &Path) {
        self.paths.insert(role.into(), p.to_path_buf());
    }

    pub fn metric(&mut self, key: &str, v: impl Into<Value>) {
        self.metrics.insert(key.into(), v.into());
    }
}

/// Appends one JSON record as a line.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(record).map_err(|e| CliError::Internal(format!("serializing record: {e}")))?;
    let io = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    writeln!(f, "{line}").map_err(io)
}
