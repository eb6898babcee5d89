//! Flat `key = value` run configuration shared by every CLI command.
//!
//! Precedence is defaults < config file < command-line overrides. Blank lines
//! and `#` comments are ignored; unknown keys and malformed values are
//! configuration errors. [`RunConfig::to_text`] lists every key, and parsing
//! its output yields an equal config.

use std::path::Path;

use crate::diffusion::{SamplerConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::{DegradationParams, Level};
use crate::net::ModelConfig;

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    /// Presets indexed like [`Level::ALL`].
    pub degrade: [DegradationParams; 3],
    /// Train and validation fractions used when building manifests.
    pub split: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: train.seed,
            model,
            train,
            sampler: SamplerConfig::default(),
            degrade: Level::ALL.map(DegradationParams::preset),
            split: (0.8, 0.2),
        }
    }
}

/// Recognised keys in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "image_channels",
    "wavelet_levels",
    "use_cnm",
    "use_esm",
    "schedule.steps",
    "schedule.beta_start",
    "schedule.beta_end",
    "sampler.steps",
    "sampler.eta",
    "cnm.base_channels",
    "cnm.num_transformer_blocks",
    "cnm.num_heads",
    "cnm.timestep_embed_dim",
    "esm.block_channels",
    "esm.dilation_rates",
    "esm.num_heads",
    "esm.attention_pool",
    "esm.attention",
    "train.iters",
    "train.batch_size",
    "train.patch_size",
    "train.l1_weight",
    "train.log_every",
    "train.checkpoint_every",
    "optim.lr",
    "optim.beta1",
    "optim.beta2",
    "optim.eps",
    "optim.decay",
    "optim.decay_every",
    "degrade.light.gamma",
    "degrade.light.gain",
    "degrade.light.noise_sigma",
    "degrade.moderate.gamma",
    "degrade.moderate.gain",
    "degrade.moderate.noise_sigma",
    "degrade.dense.gamma",
    "degrade.dense.gain",
    "degrade.dense.noise_sigma",
    "data.train_fraction",
    "data.val_fraction",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn level_index(name: &str) -> Option<usize> {
    Level::ALL.iter().position(|l| l.as_str() == name)
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Sets one key. `seed` also reseeds training.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                t.seed = self.seed;
            }
            "image_channels" => {
                m.image_channels = parse(key, value)?;
                m.cnm.condition_channels = m.image_channels;
            }
            "wavelet_levels" => m.wavelet_levels = parse(key, value)?,
            "use_cnm" => m.use_cnm = parse_bool(key, value)?,
            "use_esm" => m.use_esm = parse_bool(key, value)?,
            "schedule.steps" => m.schedule.steps = parse(key, value)?,
            "schedule.beta_start" => m.schedule.beta_start = parse(key, value)?,
            "schedule.beta_end" => m.schedule.beta_end = parse(key, value)?,
            "sampler.steps" => self.sampler.steps = parse(key, value)?,
            "sampler.eta" => self.sampler.eta = parse(key, value)?,
            "cnm.base_channels" => m.cnm.base_channels = parse(key, value)?,
            "cnm.num_transformer_blocks" => m.cnm.num_transformer_blocks = parse(key, value)?,
            "cnm.num_heads" => m.cnm.num_heads = parse(key, value)?,
            "cnm.timestep_embed_dim" => m.cnm.timestep_embed_dim = parse(key, value)?,
            "esm.block_channels" => m.esm.block_channels = parse(key, value)?,
            "esm.dilation_rates" => {
                m.esm.dilation_rates =
                    value.split(',').map(|v| parse(key, v.trim())).collect::<Result<Vec<usize>>>()?;
            }
            "esm.num_heads" => m.esm.num_heads = parse(key, value)?,
            "esm.attention_pool" => m.esm.attention_pool = parse(key, value)?,
            "esm.attention" => m.esm.attention = value.parse()?,
            "train.iters" => t.iters = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.patch_size" => t.patch_size = parse(key, value)?,
            "train.l1_weight" => t.l1_weight = parse(key, value)?,
            "train.log_every" => t.log_every = parse(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "optim.lr" => t.optimizer.lr = parse(key, value)?,
            "optim.beta1" => t.optimizer.beta1 = parse(key, value)?,
            "optim.beta2" => t.optimizer.beta2 = parse(key, value)?,
            "optim.eps" => t.optimizer.eps = parse(key, value)?,
            "optim.decay" => t.optimizer.decay = parse(key, value)?,
            "optim.decay_every" => t.optimizer.decay_every = parse(key, value)?,
            "data.train_fraction" => self.split.0 = parse(key, value)?,
            "data.val_fraction" => self.split.1 = parse(key, value)?,
            _ => {
                let parts: Vec<&str> = key.split('.').collect();
                let idx = match parts.as_slice() {
                    ["degrade", level, _] => level_index(level),
                    _ => None,
                };
                let Some(i) = idx else {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                };
                let p = &mut self.degrade[i];
                match parts[2] {
                    "gamma" => p.gamma = parse(key, value)?,
                    "gain" => p.gain = parse(key, value)?,
                    "noise_sigma" => p.noise_sigma = parse(key, value)?,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
            }
        }
        Ok(())
    }

    /// Current value of `key` in the textual form [`Self::set`] accepts.
    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model;
        let t = &self.train;
        let s = match key {
            "seed" => self.seed.to_string(),
            "image_channels" => m.image_channels.to_string(),
            "wavelet_levels" => m.wavelet_levels.to_string(),
            "use_cnm" => m.use_cnm.to_string(),
            "use_esm" => m.use_esm.to_string(),
            "schedule.steps" => m.schedule.steps.to_string(),
            "schedule.beta_start" => m.schedule.beta_start.to_string(),
            "schedule.beta_end" => m.schedule.beta_end.to_string(),
            "sampler.steps" => self.sampler.steps.to_string(),
            "sampler.eta" => self.sampler.eta.to_string(),
            "cnm.base_channels" => m.cnm.base_channels.to_string(),
            "cnm.num_transformer_blocks" => m.cnm.num_transformer_blocks.to_string(),
            "cnm.num_heads" => m.cnm.num_heads.to_string(),
            "cnm.timestep_embed_dim" => m.cnm.timestep_embed_dim.to_string(),
            "esm.block_channels" => m.esm.block_channels.to_string(),
            "esm.dilation_rates" => m.esm.dilation_rates.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
            "esm.num_heads" => m.esm.num_heads.to_string(),
            "esm.attention_pool" => m.esm.attention_pool.to_string(),
            "esm.attention" => match m.esm.attention {
                crate::net::AttentionMode::Cross => "cross".into(),
                crate::net::AttentionMode::SelfAttn => "self".into(),
            },
            "train.iters" => t.iters.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.patch_size" => t.patch_size.to_string(),
            "train.l1_weight" => t.l1_weight.to_string(),
            "train.log_every" => t.log_every.to_string(),
            "train.checkpoint_every" => t.checkpoint_every.to_string(),
            "optim.lr" => t.optimizer.lr.to_string(),
            "optim.beta1" => t.optimizer.beta1.to_string(),
            "optim.beta2" => t.optimizer.beta2.to_string(),
            "optim.eps" => t.optimizer.eps.to_string(),
            "optim.decay" => t.optimizer.decay.to_string(),
            "optim.decay_every" => t.optimizer.decay_every.to_string(),
            "data.train_fraction" => self.split.0.to_string(),
            "data.val_fraction" => self.split.1.to_string(),
            _ => {
                let parts: Vec<&str> = key.split('.').collect();
                let p = match parts.as_slice() {
                    ["degrade", level, _] => level_index(level).map(|i| &self.degrade[i]),
                    _ => None,
                }
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                match parts[2] {
                    "gamma" => p.gamma.to_string(),
                    "gain" => p.gain.to_string(),
                    "noise_sigma" => p.noise_sigma.to_string(),
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
            }
        };
        Ok(s)
    }

    /// Every key, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = self.get(key).expect("listed keys are known");
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn degradation(&self, level: Level) -> DegradationParams {
        self.degrade[Level::ALL.iter().position(|&l| l == level).expect("level listed")]
    }

    /// Checks every value against the owning module's rules.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        self.sampler.validate(self.model.schedule.steps).map_err(|e| Error::Config(e.to_string()))?;
        for p in &self.degrade {
            p.validate().map_err(|e| Error::Config(format!("degrade.{}: {e}", p.level)))?;
        }
        for w in self.degrade.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.gamma < a.gamma || b.gain > a.gain || (b.gamma == a.gamma && b.gain == a.gain) {
                return Err(Error::Config(format!(
                    "degrade.{} must darken strictly more than degrade.{}",
                    b.level, a.level
                )));
            }
        }
        let (ft, fv) = self.split;
        if !(ft >= 0.0 && fv >= 0.0 && ft + fv <= 1.0) {
            return Err(Error::Config(format!(
                "data fractions ({ft}, {fv}) must be non-negative and sum to at most 1"
            )));
        }
        Ok(())
    }
}
