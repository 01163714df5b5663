//! TOML run configuration with `[window]`, `[model]`, `[train]`, `[synth]`
//! and `[split]` sections. Missing sections and fields take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ttpoint_core::events::WindowConfig;
use ttpoint_core::harness::{Experiment, TrainConfig};
use ttpoint_core::model::ModelConfig;
use ttpoint_core::synth::SynthSpec;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of each class's streams used for training.
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub split: SplitConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical text: the TOML rendering of every field.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.window.num_points != self.model.num_points {
            return Err(Error::Config(format!(
                "window.num_points {} differs from model.num_points {}",
                self.window.num_points, self.model.num_points
            )));
        }
        if !(0.0..=1.0).contains(&self.split.train_fraction) {
            return Err(Error::Config("split.train_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Sets the master seed of both training and data generation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn experiment(&self) -> Experiment {
        Experiment { window: self.window.clone(), model: self.model.clone(), train: self.train.clone() }
    }
}
