use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Record of one CLI run, written next to its outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// Effective configuration after defaults and overrides.
    pub config: Value,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<Stage>,
    pub status: String,
    pub error: Option<String>,
}

/// A run in progress: the manifest plus where it will be written.
pub struct Run {
    pub manifest: RunManifest,
    path: Option<PathBuf>,
}

impl Run {
    pub fn new(command: &str) -> Self {
        Self {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                argv: std::env::args().collect(),
                config: Value::Null,
                seed: None,
                outputs: Vec::new(),
                stages: Vec::new(),
                status: "running".into(),
                error: None,
            },
            path: None,
        }
    }

    pub fn set_path(&mut self, path: PathBuf) {
        self.path = Some(path);
    }

    pub fn set_config(&mut self, config: &impl Serialize) -> Result<(), CliError> {
        self.manifest.config = serde_json::to_value(config).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    /// Runs `f` and records its wall-clock time under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let out = f();
        self.manifest.stages.push(Stage { name: name.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    /// Writes the manifest with the final status, if a location was set.
    pub fn finish(mut self, result: &Result<(), CliError>) -> std::io::Result<Option<PathBuf>> {
        let Some(path) = self.path.take() else {
            return Ok(None);
        };
        match result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "error".into();
                self.manifest.error = Some(e.to_string());
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(&self.manifest).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(Some(path))
    }
}
