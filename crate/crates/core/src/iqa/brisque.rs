//! BRISQUE features and scoring through a pluggable regressor, with a
//! distance-to-pristine fallback.

use super::filter::Plane;
use super::niqe::{mahalanobis, NiqeModel};
use super::nss::{mscn, scale_features, FEATURES_PER_SCALE, NUM_FEATURES};
use crate::container::{Container, Entry};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Whole-image features: the NIQE feature set over the full luma plane and
/// its 2x2-averaged half.
pub fn brisque_features(img: &ImageTensor) -> Result<Vec<f64>> {
    if img.height() < 8 || img.width() < 8 {
        return Err(Error::Argument(format!(
            "BRISQUE needs at least 8x8 pixels, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let luma = Plane::luma(img);
    let mut f = Vec::with_capacity(NUM_FEATURES);
    f.extend_from_slice(&scale_features(&mscn(&luma).0));
    f.extend_from_slice(&scale_features(&mscn(&luma.halve()).0));
    debug_assert_eq!(f.len(), 2 * FEATURES_PER_SCALE);
    Ok(f)
}

/// Learned map from features to a score.
#[derive(Debug, Clone, PartialEq)]
pub enum BrisqueRegressor {
    /// `bias + w . f`.
    Linear { weights: Vec<f64>, bias: f64 },
    /// `bias + sum_i coef_i exp(-gamma |f - s_i|^2)`; `support` is row-major.
    Rbf { support: Vec<f64>, coef: Vec<f64>, gamma: f64, bias: f64 },
}

impl BrisqueRegressor {
    pub fn predict(&self, f: &[f64]) -> Result<f64> {
        if f.len() != NUM_FEATURES {
            return Err(Error::Shape(format!("{} features, expected {NUM_FEATURES}", f.len())));
        }
        Ok(match self {
            Self::Linear { weights, bias } => bias + weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>(),
            Self::Rbf { support, coef, gamma, bias } => {
                let mut s = *bias;
                for (row, c) in support.chunks_exact(NUM_FEATURES).zip(coef) {
                    let d2: f64 = row.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
                    s += c * (-gamma * d2).exp();
                }
                s
            }
        })
    }

    pub fn to_container(&self) -> Result<Container> {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut c = Container::new();
        match self {
            Self::Linear { weights, bias } => {
                c.push(Entry::new("reg_weights", vec![NUM_FEATURES], f(weights))?);
                c.push(Entry::new("reg_bias", vec![1], vec![*bias as f32])?);
            }
            Self::Rbf { support, coef, gamma, bias } => {
                c.push(Entry::new("reg_support", vec![coef.len(), NUM_FEATURES], f(support))?);
                c.push(Entry::new("reg_coef", vec![coef.len()], f(coef))?);
                c.push(Entry::new("reg_gamma", vec![1], vec![*gamma as f32])?);
                c.push(Entry::new("reg_bias", vec![1], vec![*bias as f32])?);
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let vals =
            |name: &str| -> Result<Vec<f64>> { Ok(c.require(name)?.data.iter().map(|&x| f64::from(x)).collect()) };
        let scalar = |name: &str| -> Result<f64> {
            let v = vals(name)?;
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(Error::Container(format!("`{name}` must be a scalar")))
            }
        };
        let bias = scalar("reg_bias")?;
        if c.get("reg_weights").is_some() {
            let weights = vals("reg_weights")?;
            if weights.len() != NUM_FEATURES {
                return Err(Error::Container(format!("reg_weights must have {NUM_FEATURES} values")));
            }
            return Ok(Self::Linear { weights, bias });
        }
        let support = vals("reg_support")?;
        let coef = vals("reg_coef")?;
        if support.len() != coef.len() * NUM_FEATURES {
            return Err(Error::Container("reg_support rows must match reg_coef".into()));
        }
        Ok(Self::Rbf { support, coef, gamma: scalar("reg_gamma")?, bias })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.write(path)
    }
}

/// Score from `regressor` when given, else the pseudo-inverse Mahalanobis
/// distance of the features to the pristine statistics of `fallback`.
pub fn brisque_score(
    img: &ImageTensor,
    regressor: Option<&BrisqueRegressor>,
    fallback: Option<&NiqeModel>,
) -> Result<f64> {
    let f = brisque_features(img)?;
    match (regressor, fallback) {
        (Some(r), _) => r.predict(&f),
        (None, Some(m)) => {
            let d: Vec<f64> = f.iter().zip(&m.mean).map(|(a, b)| a - b).collect();
            Ok(mahalanobis(&d, &m.cov))
        }
        (None, None) => {
            Err(Error::Config("BRISQUE needs a regressor file or a pristine model for the distance fallback".into()))
        }
    }
}
