//! JSON run configuration with one section per pipeline stage.
//!
//! ```json
//! {
//!   "segmentation": { "top_db": 20.0, "target_len": 5120, "stride": 2560 },
//!   "features": { "n_mels": 64, "n_fft": 512, "hop": 128 },
//!   "train": { "epochs": 30, "learning_rate": 0.001, "batch_size": 32 }
//! }
//! ```
//!
//! Missing keys keep their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureConfig;
use crate::models::TrainConfig;
use crate::segmentation::SegmentationConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub segmentation: SegmentationConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}
