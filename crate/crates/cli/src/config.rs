//! Defaults file. Every key is optional; see `configs/default.json`.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use shape_assembly::baselines::{BoConfig, SaConfig};
use shape_assembly::fan::FanConfig;
use shape_assembly::fragmenter::Scenario;
use shape_assembly::train::TrainConfig;

use crate::SplitArg;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateDefaults {
    pub n: usize,
    pub k: usize,
    pub bins: usize,
    pub scenario: Scenario,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for GenerateDefaults {
    fn default() -> Self {
        Self { n: 100, k: 2, bins: 1, scenario: Scenario::Normal, resolution: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalDefaults {
    pub split: SplitArg,
    pub stride: usize,
    pub seed: u64,
}

impl Default for EvalDefaults {
    fn default() -> Self {
        Self { split: SplitArg::Test, stride: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub generate: GenerateDefaults,
    pub fan: FanConfig,
    pub train: TrainConfig,
    pub sa: SaConfig,
    pub bo: BoConfig,
    pub eval: EvalDefaults,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
