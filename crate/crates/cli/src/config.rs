//! Run configuration file (TOML). Command-line flags override its values.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use timing_core::datamodel::SplitRatios;
use timing_core::experiment::TrainConfig;
use timing_core::nets::ModelConfig;
use timing_core::syngen::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub train: u32,
    pub val: u32,
    pub test: u32,
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self { train: r.train, val: r.val, test: r.test, seed: 0 }
    }
}

impl SplitSettings {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios { train: self.train, val: self.val, test: self.test }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation and batch shuffling.
    pub seed: u64,
    /// `default`, `synth`, `none`, or a path to a routine bank JSON file.
    pub routines: Option<String>,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSettings,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
