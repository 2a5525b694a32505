//! The single TOML configuration file. Every section is optional and falls
//! back to its defaults; unknown keys are rejected.
//!
//! ```toml
//! [hpm]        # subjective/objective curves and fusion weights
//! [env]        # team shape, kappa, noise, mission length
//! [ppo]        # trainer hyperparameters
//! [session]    # live session protocol
//! [bench]      # simulated experiment
//! [validate]   # trained-vs-random comparison
//! ```

use crate::bench::BenchConfig;
use crate::env::EnvConfig;
use crate::hpm::HpmParams;
use crate::ppo::PpoConfig;
use crate::session::SessionConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            seed: 12_345,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub hpm: HpmParams,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub session: SessionConfig,
    pub bench: BenchConfig,
    pub validate: ValidateConfig,
}

impl AppConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.env.validate().map_err(|e| inv(e.to_string()))?;
        self.ppo.validate().map_err(|e| inv(e.to_string()))?;
        self.session.validate().map_err(|e| inv(e.to_string()))?;
        self.bench.validate().map_err(|e| inv(e.to_string()))?;
        Ok(())
    }
}
