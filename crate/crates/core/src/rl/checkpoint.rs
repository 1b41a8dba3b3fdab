use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RlError, SacLearner};
use crate::envs::{Condition, TaskKind};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained controller: learner state plus what is needed to run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub task: TaskKind,
    pub condition: Condition,
    pub seed: u64,
    pub step: u64,
    pub config_hash: String,
    /// Percentile table of the last simulator the policy was trained on.
    /// The deployed rate-to-command mapping keeps this calibration.
    pub mapping_percentiles: Option<Vec<f64>>,
    pub learner: SacLearner,
}

impl PolicyCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| RlError::Checkpoint(e.to_string()))?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(RlError::Checkpoint(format!(
                "unsupported checkpoint version {version:?}"
            )));
        }
        let cp: Self =
            serde_json::from_value(value).map_err(|e| RlError::Checkpoint(e.to_string()))?;
        if cp.config_hash != cp.learner.config.hash() {
            return Err(RlError::Checkpoint("config hash does not match stored config".into()));
        }
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        fs::write(path, self.to_json())
            .map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RlError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
