use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Record of one CLI run, written before the work starts and rewritten with
/// `finished` and `outputs` once it completes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Resolved configuration, as JSON.
    pub config: serde_json::Value,
    /// sha256 of the serialized `config`.
    pub config_digest: String,
    pub seed: Option<u64>,
    /// Unix seconds.
    pub started: f64,
    pub finished: Option<f64>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// `out.jsonl` → `out.jsonl.manifest.json`; an explicit `manifest.json` is kept.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.file_name().is_some_and(|n| n == "manifest.json") {
        return out.to_path_buf();
    }
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

impl RunManifest {
    pub fn begin(command: &str, config: &impl Serialize, seed: Option<u64>, out: &Path) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let m = RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_digest: digest(&config),
            config,
            seed,
            started: now(),
            finished: None,
            outputs: Vec::new(),
            path: manifest_path(out),
        };
        m.write()?;
        Ok(m)
    }

    pub fn finish(&mut self, outputs: Vec<PathBuf>) -> Result<()> {
        self.finished = Some(now());
        self.outputs = outputs;
        self.write()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write(&self) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        fs::write(&self.path, body).map_err(|e| Error::file(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_beside_the_output() {
        assert_eq!(manifest_path(Path::new("a/b.jsonl")), PathBuf::from("a/b.jsonl.manifest.json"));
        assert_eq!(manifest_path(Path::new("run/manifest.json")), PathBuf::from("run/manifest.json"));
    }

    #[test]
    fn digest_follows_content() {
        let a = serde_json::json!({"seed": 1});
        let b = serde_json::json!({"seed": 2});
        assert_eq!(digest(&a), digest(&a.clone()));
        assert_ne!(digest(&a), digest(&b));
        assert_eq!(digest(&a).len(), 64);
    }
}
