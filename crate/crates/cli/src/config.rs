//! TOML configuration with one section per command.

use std::fs;
use std::path::Path;

use rednet_core::pipeline::PipelineConfig;
use rednet_core::synthgen::PairConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub thresholds: Vec<f64>,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            n_boot: 100,
            thresholds: vec![0.7, 0.8, 0.9],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub simulate: PairConfig,
    pub analyze: PipelineConfig,
    pub bootstrap: BootstrapSettings,
}

/// Defaults when `path` is `None`; missing keys keep their defaults.
pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// `"0.7,0.8,0.9"` → values in `[0, 1]`.
pub fn parse_thresholds(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("`{}` is not a number", t.trim()))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(format!("threshold {v} is outside [0, 1]"))
            }
        })
        .collect()
}
