//! Versioned JSON run configuration.

use std::path::{Path, PathBuf};

use fedmix_core::fl::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_test_fraction() -> f64 {
    0.2
}

/// A `run` configuration file.
///
/// ```json
/// { "schema": 1, "data": "ds/", "test_fraction": 0.2,
///   "experiment": { "algo": "moon", "model": { "arch": "resnet_s", "num_classes": 6 },
///                   "partition": { "kind": "ds2" }, "rounds": 10 } }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    /// Training data: a dataset directory or manifest. Relative paths are
    /// resolved against the config file's directory.
    pub data: PathBuf,
    /// Separate test data. Without it, a seeded `test_fraction` of `data`
    /// is held out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_data: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Run clients on worker threads. Results do not change, only timings.
    #[serde(default)]
    pub parallel: bool,
    /// Write the global model after every round.
    #[serde(default)]
    pub checkpoints: bool,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        match value.get("schema").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::format(path, format!("unsupported schema version {v}"))),
            None => return Err(Error::format(path, "missing integer \"schema\" field")),
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data = base.join(&cfg.data);
        cfg.test_data = cfg.test_data.map(|p| base.join(p));
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
