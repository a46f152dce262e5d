//! The run configuration file: one TOML section per module plus `[run]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trafficrl::drift::DriftConfig;
use trafficrl::env::{EnvConfig, RewardWeights};
use trafficrl::ingest::GeneratorConfig;
use trafficrl::qnet::QNetConfig;
use trafficrl::replay::ReplayConfig;
use trafficrl::trainer::{PipelineConfig, TrainerConfig};

use crate::error::{CliError, Result};

/// Seed and paths of a run. Command-line flags override these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            data_dir: None,
            out_dir: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub qnet: QNetConfig,
    pub trainer: TrainerConfig,
    pub replay: ReplayConfig,
    pub drift: DriftConfig,
    pub generator: GeneratorConfig,
}

impl RunConfig {
    /// Parses and validates; unknown keys and out-of-range values are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seed > i64::MAX as u64 {
            return Err(CliError::Config(
                "run: seed must fit in a signed 64-bit integer".into(),
            ));
        }
        if self.run.threads == Some(0) {
            return Err(CliError::Config("run: threads must be >= 1".into()));
        }
        self.pipeline()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.generator
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// The learning settings handed to the trainer.
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            env: self.env.clone(),
            reward: self.reward,
            qnet: self.qnet.clone(),
            trainer: self.trainer.clone(),
            replay: self.replay.clone(),
            drift: self.drift.clone(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.run.seed
    }
}
