//! The `--config` file: every field optional, command-line flags win.

use std::path::Path;

use serde::{Deserialize, Serialize};

use koed::dataset::GenProfile;
use koed::SimConfig;

use crate::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub sim: SimConfig,
    /// Sample count for `mocu` and the labels of `gen-data`.
    pub k: Option<usize>,
    /// Distribution used by `gen-data --profile custom`.
    pub profile: Option<GenProfile>,
    pub oed: OedConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OedConfig {
    pub k: Option<usize>,
    pub trials: Option<usize>,
    pub eval_k: Option<usize>,
    pub eval_repeats: Option<usize>,
    pub simulate_outcomes: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| {
            koed::Error::Format(format!("config {}: {e}", path.display()))
        })?;
        cfg.sim.validate()?;
        Ok(cfg)
    }
}
