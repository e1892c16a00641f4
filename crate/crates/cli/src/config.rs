use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vqarank::data::synth::SyntheticWorldConfig;
use vqarank::pipeline::{BankConfig, HeadStageConfig, RankerStageConfig};
use vqarank::qa_select::MarginalKind;

pub const DATA_DIR_ENV: &str = "VQARANK_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub n_samples: usize,
    pub marginals: MarginalKind,
    /// Candidate captions: the ranker's top `top_k` for the query image.
    pub top_k: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            marginals: MarginalKind::FromJoint,
            top_k: 10,
        }
    }
}

/// Everything a TOML config file may set. Unset keys keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub world: SyntheticWorldConfig,
    pub image_head: HeadStageConfig,
    pub caption_head: HeadStageConfig,
    pub bank: BankConfig,
    pub ranker: RankerStageConfig,
    pub select: SelectSection,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// `--data-dir`, else `$VQARANK_DATA_DIR`, else `./data`.
pub fn data_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}
