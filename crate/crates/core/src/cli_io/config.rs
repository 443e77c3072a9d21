use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SyntheticConfig;
use crate::degrader::DegradationConfig;
use crate::error::{Error, Result};
use crate::fusion_net::NetworkConfig;
use crate::train_engine::{AugmentConfig, TrainConfig};

/// Every tunable of the command-line pipeline, one TOML table per section.
/// Missing keys keep their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub degrader: DegradationConfig,
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub synthetic: SyntheticConfig,
}

impl Default for PipelineConfig {
    /// Desk-scale network; the full-size network is `NetworkConfig::default()`.
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            degrader: DegradationConfig::default(),
            network: NetworkConfig::desk(),
            augment: AugmentConfig::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        let mut base = toml::Value::try_from(PipelineConfig::default()).map_err(|e| Error::invalid(format!("config: {e}")))?;
        merge(&mut base, over);
        let cfg: PipelineConfig = base.try_into().map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.degrader.validate()?;
        self.network.validate()?;
        self.synthetic.validate()
    }
}
