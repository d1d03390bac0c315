//! Run manifest: every command that writes an output directory also drops
//! a `manifest.json` recording what produced it. The timestamp makes this
//! the one deliberately non-reproducible artifact per directory; all data
//! files are byte-identical across reruns.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uqattn::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name, e.g. "generate".
    pub command: String,
    /// Path of the config file the run was launched with, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    /// Fully resolved configuration after defaults were applied.
    pub resolved: Value,
    /// Seeds the run consumed (empty when the command is deterministic).
    pub seeds: Vec<u64>,
    pub tool_version: String,
    /// RFC 3339 wall-clock timestamp of the run.
    pub timestamp: String,
    pub output_dir: String,
}

impl RunManifest {
    pub fn new(command: &str, resolved: Value, seeds: Vec<u64>, out_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            resolved,
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            output_dir: out_dir.display().to_string(),
        }
    }

    pub fn with_config_path(mut self, path: &Path) -> Self {
        self.config_path = Some(path.display().to_string());
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
