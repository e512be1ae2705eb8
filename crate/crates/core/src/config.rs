//! TOML run configuration.
//!
//! ```toml
//! [delay]
//! m = 8
//! tau = 1
//! p = 8
//! q = 8
//!
//! [window]
//! lookback = 255
//! horizon = 48
//! stride = 1
//!
//! [encoder]
//! d_model = 64
//! n_layers = 2
//! n_heads = 4
//! d_ff = 128
//! pool_kernel = 1
//! pool_stride = 1
//! dropout = 0.0
//! seed = 0
//! head = "affine"        # or "mlp_gelu"
//! head_hidden = 128
//!
//! [train]
//! lr = 1e-3
//! lr_min = 0.0
//! batch_size = 64
//! epochs = 100
//! anneal = true
//! freeze_encoder = false
//! seed = 0
//! data_fraction = 1.0
//! patience = 20
//! window_stride = 1
//!
//! [mi]
//! n_bins = 16
//! top_k = 5
//! w_self = 0.9
//! w_neighbor = 0.02
//! ```
//!
//! Every section and key is optional; missing keys take the defaults above
//! one by one. Unknown keys are rejected. The model's lookback and horizon
//! come from `[window]`; `encoder.horizon`, if given, must agree with it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::MIConfig;
use crate::data::WindowSpec;
use crate::embedding::DelayConfig;
use crate::encoder::{EncoderConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub delay: DelayConfig,
    pub window: WindowSpec,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub mi: MIConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            delay: DelayConfig { m: 8, tau: 1, p: 8, q: 8 },
            window: WindowSpec {
                lookback: 255,
                horizon: 48,
                stride: 1,
            },
            encoder: EncoderConfig {
                horizon: 48,
                ..EncoderConfig::default()
            },
            train: TrainConfig::default(),
            mi: MIConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let explicit_horizon = raw
            .get("encoder")
            .and_then(|e| e.get("horizon"))
            .is_some();
        let mut merged = toml::Table::try_from(Config::default()).expect("defaults serialize");
        for (section, value) in raw {
            match (merged.get_mut(&section), value) {
                (Some(toml::Value::Table(base)), toml::Value::Table(keys)) => base.extend(keys),
                (_, value) => {
                    merged.insert(section, value);
                }
            }
        }
        let mut cfg: Config = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if explicit_horizon {
            if cfg.encoder.horizon != cfg.window.horizon {
                return Err(Error::Config(format!(
                    "encoder.horizon = {} disagrees with window.horizon = {}",
                    cfg.encoder.horizon, cfg.window.horizon
                )));
            }
        } else {
            cfg.encoder.horizon = cfg.window.horizon;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Uses one seed for parameter initialization and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.encoder.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            delay: self.delay,
            lookback: self.window.lookback,
            encoder: EncoderConfig {
                horizon: self.window.horizon,
                ..self.encoder
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        self.mi.validate()
    }
}
