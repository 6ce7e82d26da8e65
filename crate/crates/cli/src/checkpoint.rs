//! Versioned JSON checkpoints carrying the complete trainer state.

use std::fs;
use std::path::Path;

use drmoe_core::metrics::MetricsReport;
use drmoe_core::train::TrainerState;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::write_text;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub state: TrainerState,
    /// Validation metrics after each completed epoch, when a validation set
    /// was given.
    pub validation: Vec<MetricsReport>,
}

impl Checkpoint {
    pub fn new(state: TrainerState, validation: Vec<MetricsReport>) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            state,
            validation,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let err = |reason: String| CliError::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(err(format!("unsupported format_version {v}"))),
            None => return Err(err("missing format_version".into())),
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        ckpt.state
            .config
            .validate()
            .map_err(|e| err(e.to_string()))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text, path)
    }
}
