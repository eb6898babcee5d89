//! Noise predictor (CNM), edge sharpener (ESM), training loss and
//! checkpoints, built on the tape in [`crate::nn`].

mod checkpoint;
mod cnm;
mod esm;
mod layers;
mod loss;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};

pub use checkpoint::{Model, CONFIG_ENTRY};
pub use cnm::{cnm_forward, cnm_predict_noise, init_cnm, timestep_embedding};
pub use esm::{dilated_residual_block, esm_apply, esm_forward, init_dilated_residual_block, init_esm};
pub use loss::{training_loss, training_loss_graph, DEFAULT_L1_WEIGHT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnmConfig {
    pub base_channels: usize,
    pub num_transformer_blocks: usize,
    pub num_heads: usize,
    pub timestep_embed_dim: usize,
    pub condition_channels: usize,
}

impl Default for CnmConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            num_transformer_blocks: 2,
            num_heads: 4,
            timestep_embed_dim: 64,
            condition_channels: 3,
        }
    }
}

impl CnmConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.base_channels,
            self.num_transformer_blocks,
            self.num_heads,
            self.timestep_embed_dim,
            self.condition_channels,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("CNM sizes must all be at least 1".into()));
        }
        if !self.base_channels.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "CNM base_channels {} not divisible by num_heads {}",
                self.base_channels, self.num_heads
            )));
        }
        if !self.timestep_embed_dim.is_multiple_of(2) {
            return Err(Error::Config("timestep_embed_dim must be even".into()));
        }
        Ok(())
    }
}

/// How the ESM attention draws keys and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Queries from one direction, keys and values from the other two.
    Cross,
    /// Each direction attends to itself.
    #[serde(rename = "self")]
    SelfAttn,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Self::Cross),
            "self" => Ok(Self::SelfAttn),
            _ => Err(Error::Config(format!("unknown attention mode `{s}` (cross|self)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsmConfig {
    pub block_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub num_heads: usize,
    /// Average-pooling factor applied before attention.
    pub attention_pool: usize,
    pub attention: AttentionMode,
}

impl Default for EsmConfig {
    fn default() -> Self {
        Self {
            block_channels: 32,
            dilation_rates: vec![1, 2],
            num_heads: 4,
            attention_pool: 4,
            attention: AttentionMode::Cross,
        }
    }
}

impl EsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels == 0 || self.num_heads == 0 || self.attention_pool == 0 {
            return Err(Error::Config("ESM sizes must all be at least 1".into()));
        }
        if self.dilation_rates.is_empty() || self.dilation_rates.contains(&0) {
            return Err(Error::Config("ESM dilation_rates must be non-empty and each at least 1".into()));
        }
        if !self.block_channels.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "ESM block_channels {} not divisible by num_heads {}",
                self.block_channels, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model from its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_channels: usize,
    pub wavelet_levels: usize,
    pub cnm: CnmConfig,
    pub esm: EsmConfig,
    pub schedule: ScheduleConfig,
    pub use_cnm: bool,
    pub use_esm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            wavelet_levels: 1,
            cnm: CnmConfig::default(),
            esm: EsmConfig::default(),
            schedule: ScheduleConfig::default(),
            use_cnm: true,
            use_esm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::Config(format!("image_channels must be 1 or 3, got {}", self.image_channels)));
        }
        if !(1..=3).contains(&self.wavelet_levels) {
            return Err(Error::Config(format!("wavelet levels must be 1..=3, got {}", self.wavelet_levels)));
        }
        if self.cnm.condition_channels != self.image_channels {
            return Err(Error::Config(format!(
                "condition_channels {} must equal image_channels {}",
                self.cnm.condition_channels, self.image_channels
            )));
        }
        self.cnm.validate()?;
        self.esm.validate()?;
        self.schedule.validate()
    }

    /// Smallest image side the pipeline accepts.
    pub fn min_image_side(&self) -> usize {
        (1 << self.wavelet_levels) * 4
    }
}
