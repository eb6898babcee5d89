use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ImageTensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Light,
    Moderate,
    Dense,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Light, Level::Moderate, Level::Dense];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Light => "light",
            Level::Moderate => "moderate",
            Level::Dense => "dense",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(Level::Light),
            "moderate" => Ok(Level::Moderate),
            "dense" => Ok(Level::Dense),
            other => Err(Error::Argument(format!("unknown level `{other}`"))),
        }
    }
}

/// Power-law darkening, linear attenuation and additive sensor noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationParams {
    pub level: Level,
    pub gamma: f32,
    pub gain: f32,
    pub noise_sigma: f32,
}

impl DegradationParams {
    pub fn preset(level: Level) -> Self {
        let (gamma, gain, noise_sigma) = match level {
            Level::Light => (1.5, 0.7, 0.01),
            Level::Moderate => (2.2, 0.45, 0.02),
            Level::Dense => (3.0, 0.25, 0.03),
        };
        Self { level, gamma, gain, noise_sigma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 1.0) {
            return Err(Error::Argument(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::Argument(format!("gain must be in (0, 1], got {}", self.gain)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Argument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// `clamp(gain * img^gamma + N(0, sigma^2), 0, 1)` per channel, seeded.
pub fn synthesize_low_light(img: &ImageTensor, p: &DegradationParams, seed: u64) -> Result<ImageTensor> {
    p.validate()?;
    let mut rng = rng::stream(seed, "degrade");
    let noise = if p.noise_sigma > 0.0 {
        Some(Normal::new(0.0f32, p.noise_sigma).map_err(|e| Error::Argument(e.to_string()))?)
    } else {
        None
    };
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let mut out = p.gain * v.powf(p.gamma);
            if let Some(n) = &noise {
                out += n.sample(&mut rng);
            }
            out
        })
        .collect();
    ImageTensor::from_clamped(img.height(), img.width(), img.channels(), data)
}
