//! Run configuration and checkpoint files.
//!
//! A run is described by one JSON config; checkpoints embed a digest of that
//! config so a resumed run can refuse a mismatched configuration and
//! continue the training trajectory bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ControlPath, NetConfig};
use crate::error::{Result, SmpError};
use crate::rng::RngState;
use crate::tasks::TaskSpec;
use crate::trainer::TrainConfig;

/// Evaluation settings shared by the report commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Predictive samples per grid point / observation.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    #[serde(default = "default_band_level")]
    pub band_level: f64,
    /// Weight-surface cells per axis (classification).
    #[serde(default = "default_surface_resolution")]
    pub surface_resolution: usize,
    #[serde(default = "default_surface_samples")]
    pub surface_samples: usize,
    /// Test points for classification metrics.
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    /// Votes per test point; 1 reproduces single-draw classification.
    #[serde(default = "default_votes")]
    pub votes: usize,
    /// Observations per parameter-estimation evaluation.
    #[serde(default = "default_observations")]
    pub observations: usize,
    /// True parameter used to generate evaluation observations.
    #[serde(default = "default_true_alpha")]
    pub true_alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    2000
}
fn default_grid_resolution() -> usize {
    101
}
fn default_band_level() -> f64 {
    0.95
}
fn default_surface_resolution() -> usize {
    50
}
fn default_surface_samples() -> usize {
    40
}
fn default_test_count() -> usize {
    2000
}
fn default_votes() -> usize {
    1
}
fn default_observations() -> usize {
    100
}
fn default_true_alpha() -> f64 {
    4.0
}

impl Default for EvalConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all eval fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PathsConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// One reproducible experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub task: TaskSpec,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.task.validate()?;
        if self.task.input_dim() != self.net.input_dim {
            return Err(SmpError::config(format!(
                "task {} has input_dim {}, net expects {}",
                self.task.name(),
                self.task.input_dim(),
                self.net.input_dim
            )));
        }
        if self.task.label_dim() != self.net.label_dim {
            return Err(SmpError::config(format!(
                "task {} has label_dim {}, net expects {}",
                self.task.name(),
                self.task.label_dim(),
                self.net.label_dim
            )));
        }
        Ok(())
    }

    /// SHA-256 digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Serialized training state; resuming from this continues bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub controls: ControlPath,
    pub iteration: usize,
    pub rng_state: RngState,
    pub config_hash: String,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| SmpError::config(format!("serialize {}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| SmpError::io(path.display().to_string(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| SmpError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| SmpError::Parse {
        path: path.display().to_string(),
        record: 0,
        message: e.to_string(),
    })
}
