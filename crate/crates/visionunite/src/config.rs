//! TOML run configuration: a `[model]` and a `[train]` table.

use std::path::Path;

use serde::{Deserialize, Serialize};
use visionunite_core::model::ModelConfig;
use visionunite_core::train::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.into(),
            message: e.to_string(),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(Error::io(path))?, path)
    }

    pub fn validate(&self, origin: &Path) -> Result<()> {
        let config_err = |e: visionunite_core::Error| Error::Config { path: origin.into(), message: e.to_string() };
        self.model.validate().map_err(config_err)?;
        self.train.validate().map_err(config_err)?;
        if self.train.max_tokens > self.model.max_tokens {
            return Err(Error::Config {
                path: origin.into(),
                message: format!(
                    "train.max_tokens {} exceeds model.max_tokens {}",
                    self.train.max_tokens, self.model.max_tokens
                ),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
