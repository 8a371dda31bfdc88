//! `manifest.json`: everything needed to reproduce a run, and nothing that
//! varies between identical runs (no paths, times or worker counts).

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};
use crate::io::sha256_file;

pub struct Manifest {
    command: &'static str,
    config: Value,
    seeds: Map<String, Value>,
    inputs: Vec<(String, PathBuf)>,
    extra: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, config: Value) -> Self {
        Manifest {
            command,
            config,
            seeds: Map::new(),
            inputs: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), json!(value));
        self
    }

    /// Inputs are recorded by role, with their SHA-256.
    pub fn input(mut self, role: &str, path: &Path) -> Self {
        self.inputs.push((role.into(), path.to_path_buf()));
        self
    }

    pub fn note(mut self, key: &str, value: Value) -> Self {
        self.extra.insert(key.into(), value);
        self
    }

    /// Writes `manifest.json` into `dir`, digesting `outputs` (names within
    /// `dir`) as they are on disk now.
    pub fn write(self, dir: &Path, outputs: &[&str]) -> CliResult<()> {
        let mut inputs = Map::new();
        for (role, path) in &self.inputs {
            inputs.insert(role.clone(), json!(sha256_file(path)?));
        }
        let mut outs = Map::new();
        for name in outputs {
            outs.insert((*name).into(), json!(sha256_file(&dir.join(name))?));
        }
        let mut doc = Map::new();
        doc.insert("tool".into(), json!("rednet"));
        doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        doc.insert("command".into(), json!(self.command));
        doc.insert("config".into(), self.config);
        doc.insert("seeds".into(), Value::Object(self.seeds));
        doc.insert("inputs".into(), Value::Object(inputs));
        doc.insert("outputs".into(), Value::Object(outs));
        for (k, v) in self.extra {
            doc.insert(k, v);
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(doc))
            .map_err(|e| CliError::invalid(format!("manifest: {e}")))?;
        text.push('\n');
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
