use std::path::Path;

use super::{init_cnm, init_esm, ModelConfig};
use crate::container::{Container, Entry};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::rng::SeedSplitter;

/// Name of the checkpoint entry holding the model configuration as JSON.
pub const CONFIG_ENTRY: &str = "__config__";

/// A configured model and its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
}

impl Model {
    /// Fresh parameters drawn from the `init` stream of `seed`. Disabled
    /// components own no parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedSplitter::new(seed).stream("init");
        let mut params = ParamStore::new();
        if config.use_cnm {
            init_cnm(&mut params, &config.cnm, config.image_channels, &mut rng)?;
        }
        if config.use_esm {
            init_esm(&mut params, &config.esm, config.image_channels, &mut rng)?;
        }
        Ok(Self { config, params })
    }

    pub fn to_container(&self) -> Result<Container> {
        let json = serde_json::to_string(&self.config).map_err(|e| Error::Internal(e.to_string()))?;
        let mut c = Container::new();
        c.push(Entry::from_str_value(CONFIG_ENTRY, &json));
        self.params.write_into(&mut c)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let json = c.require(CONFIG_ENTRY)?.as_string()?;
        let config: ModelConfig =
            serde_json::from_str(&json).map_err(|e| Error::Config(format!("checkpoint configuration: {e}")))?;
        let mut model = Self::new(config, 0)?;
        if c.entries.len() != model.params.len() + 1 {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors but its configuration needs {}",
                c.entries.len() - 1,
                model.params.len()
            )));
        }
        model
            .params
            .load_from(c)
            .map_err(|e| Error::Config(format!("checkpoint does not match its configuration: {e}")))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
