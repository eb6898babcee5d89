//! NIQE: distance between the multivariate Gaussian of a test image's patch
//! features and one fitted on pristine images.

use nalgebra::{DMatrix, DVector};

use super::filter::Plane;
use super::nss::{block, mscn, scale_features, FEATURES_PER_SCALE, NUM_FEATURES};
use crate::container::{Container, Entry};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::par;

pub const DEFAULT_PATCH: usize = 32;
pub const SHARPNESS_THRESHOLD: f64 = 0.75;
pub const MIN_PRISTINE_IMAGES: usize = 10;
const FLAT_DEVIATION: f64 = 1e-6;

/// Pristine feature statistics. Values are held at `f32` precision so that
/// a fitted model and its saved copy score identically.
#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    /// Row-major `NUM_FEATURES x NUM_FEATURES`.
    pub cov: Vec<f64>,
    pub patch_size: usize,
    pub sharpness_threshold: f64,
}

fn check_patch(p: usize) -> Result<()> {
    if p < 16 || !p.is_multiple_of(2) {
        return Err(Error::Argument(format!("NIQE patch size must be even and at least 16, got {p}")));
    }
    Ok(())
}

/// Features and mean local deviation of every full, non-overlapping patch.
pub(crate) fn patch_features(img: &ImageTensor, patch: usize) -> (Vec<[f64; NUM_FEATURES]>, Vec<f64>) {
    let luma = Plane::luma(img);
    let (m1, s1) = mscn(&luma);
    let (m2, _) = mscn(&luma.halve());
    let half = patch / 2;
    let (mut feats, mut sharp) = (Vec::new(), Vec::new());
    for by in 0..img.height() / patch {
        for bx in 0..img.width() / patch {
            let mut f = [0.0; NUM_FEATURES];
            f[..FEATURES_PER_SCALE].copy_from_slice(&scale_features(&block(&m1, by * patch, bx * patch, patch, patch)));
            f[FEATURES_PER_SCALE..].copy_from_slice(&scale_features(&block(&m2, by * half, bx * half, half, half)));
            feats.push(f);
            let s = block(&s1, by * patch, bx * patch, patch, patch);
            sharp.push(s.data.iter().sum::<f64>() / s.data.len() as f64);
        }
    }
    (feats, sharp)
}

/// Mean and unbiased covariance of at least two samples.
pub(crate) fn mvg(samples: &[[f64; NUM_FEATURES]]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mut mean = vec![0.0; NUM_FEATURES];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; NUM_FEATURES * NUM_FEATURES];
    for s in samples {
        for i in 0..NUM_FEATURES {
            let di = s[i] - mean[i];
            for j in 0..NUM_FEATURES {
                cov[i * NUM_FEATURES + j] += di * (s[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n - 1.0);
    (mean, cov)
}

fn to_f32_precision(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
}

/// `sqrt(d^T S^+ d)` with a pseudo-inverse, so singular `S` never fails.
pub(crate) fn mahalanobis(d: &[f64], s: &[f64]) -> f64 {
    let n = d.len();
    let m = DMatrix::from_row_slice(n, n, s);
    let svd = m.svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = max_sv * n as f64 * f64::EPSILON;
    let pinv = match svd.pseudo_inverse(tol.max(f64::MIN_POSITIVE)) {
        Ok(p) => p,
        Err(_) => return 0.0,
    };
    let d = DVector::from_column_slice(d);
    (d.transpose() * pinv * &d)[(0, 0)].max(0.0).sqrt()
}

impl NiqeModel {
    /// Fits on pristine images, keeping patches whose mean local deviation is
    /// at least `SHARPNESS_THRESHOLD` of the sharpest patch in their image.
    pub fn fit(pristine: &[ImageTensor], patch: usize) -> Result<Self> {
        check_patch(patch)?;
        if pristine.len() < MIN_PRISTINE_IMAGES {
            return Err(Error::Argument(format!(
                "NIQE fit needs at least {MIN_PRISTINE_IMAGES} images, got {}",
                pristine.len()
            )));
        }
        let per_image = par::map_slice(pristine, |img| {
            let (feats, sharp) = patch_features(img, patch);
            let max = sharp.iter().copied().fold(0.0, f64::max);
            // Far below one 8-bit step: only rounding residue of a flat image.
            if max <= FLAT_DEVIATION {
                return Vec::new();
            }
            feats
                .into_iter()
                .zip(sharp)
                .filter(|(_, s)| *s >= SHARPNESS_THRESHOLD * max)
                .map(|(f, _)| f)
                .collect::<Vec<_>>()
        });
        let samples: Vec<[f64; NUM_FEATURES]> = per_image.into_iter().flatten().collect();
        if samples.len() < 2 {
            return Err(Error::Fit(format!(
                "only {} textured {patch}x{patch} patches in the pristine corpus",
                samples.len()
            )));
        }
        let (mut mean, mut cov) = mvg(&samples);
        if cov.iter().all(|c| c.abs() <= f64::EPSILON) {
            return Err(Error::Fit("pristine patch features do not vary".into()));
        }
        // Rounding to f32 moves eigenvalues by at most n * max|c| * 2^-24;
        // four times that on the diagonal keeps the stored matrix PSD.
        let max = cov.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let ridge = NUM_FEATURES as f64 * max * 2f64.powi(-22);
        for i in 0..NUM_FEATURES {
            cov[i * NUM_FEATURES + i] += ridge;
        }
        to_f32_precision(&mut mean);
        to_f32_precision(&mut cov);
        Ok(Self { mean, cov, patch_size: patch, sharpness_threshold: SHARPNESS_THRESHOLD })
    }

    /// Quality score, lower is more natural. Every full patch of `img`
    /// contributes; at least two are required.
    pub fn score(&self, img: &ImageTensor) -> Result<f64> {
        let (feats, _) = patch_features(img, self.patch_size);
        if feats.len() < 2 {
            return Err(Error::Argument(format!(
                "NIQE needs at least two {p}x{p} patches, image is {}x{}",
                img.height(),
                img.width(),
                p = self.patch_size
            )));
        }
        let (mu, cov) = mvg(&feats);
        let d: Vec<f64> = self.mean.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let s: Vec<f64> = self.cov.iter().zip(&cov).map(|(a, b)| (a + b) / 2.0).collect();
        Ok(mahalanobis(&d, &s))
    }

    pub fn to_container(&self) -> Result<Container> {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut c = Container::new();
        c.push(Entry::new("mean", vec![NUM_FEATURES], f(&self.mean))?);
        c.push(Entry::new("cov", vec![NUM_FEATURES, NUM_FEATURES], f(&self.cov))?);
        c.push(Entry::new("patch_size", vec![1], vec![self.patch_size as f32])?);
        c.push(Entry::new("sharpness_threshold", vec![1], vec![self.sharpness_threshold as f32])?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let mean = c.require("mean")?;
        let cov = c.require("cov")?;
        if mean.dims != [NUM_FEATURES] || cov.dims != [NUM_FEATURES, NUM_FEATURES] {
            return Err(Error::Container(format!(
                "NIQE model must hold a {NUM_FEATURES}-vector and a {NUM_FEATURES}x{NUM_FEATURES} matrix"
            )));
        }
        let scalar = |name: &str| -> Result<f32> {
            let e = c.require(name)?;
            e.data
                .first()
                .copied()
                .filter(|_| e.data.len() == 1)
                .ok_or_else(|| Error::Container(format!("`{name}` must be a scalar")))
        };
        let patch_size = scalar("patch_size")? as usize;
        check_patch(patch_size).map_err(|e| Error::Container(e.to_string()))?;
        let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
        Ok(Self {
            mean: f(&mean.data),
            cov: f(&cov.data),
            patch_size,
            sharpness_threshold: f64::from(scalar("sharpness_threshold")?),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
