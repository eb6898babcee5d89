use super::sampler::{sample_from_seed, SamplerConfig};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::net::{cnm_predict_noise, esm_apply, Model, ModelConfig};
use crate::nn::Tensor;
use crate::wavelet::{dwt2, idwt2, Band, DetailBands};

/// Channel-last bands to one `(n, c, h, w)` tensor.
pub fn bands_to_nchw(bands: &[&Band]) -> Result<Tensor<f32>> {
    let first = bands.first().ok_or_else(|| Error::Argument("no bands".into()))?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(bands.len() * h * w * c);
    for b in bands {
        if b.dims() != (h, w, c) {
            return Err(Error::Shape(format!("band {:?} vs {:?}", b.dims(), (h, w, c))));
        }
        for ch in 0..c {
            data.extend((0..h * w).map(|i| b.data[i * c + ch]));
        }
    }
    Tensor::from_vec(vec![bands.len(), c, h, w], data)
}

/// Item `index` of an `(n, c, h, w)` tensor as a channel-last band.
pub fn nchw_to_band(t: &Tensor<f32>, index: usize) -> Result<Band> {
    let (n, c, h, w) = t.dims4()?;
    if index >= n {
        return Err(Error::Shape(format!("item {index} of batch {n}")));
    }
    let src = &t.data()[index * c * h * w..(index + 1) * c * h * w];
    let mut out = Band::zeros(h, w, c);
    for ch in 0..c {
        for i in 0..h * w {
            out.data[i * c + ch] = src[ch * h * w + i];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PadMode {
    Edge,
    Zero,
}

pub(crate) fn pad_band(b: &Band, height: usize, width: usize, mode: PadMode) -> Band {
    let (h, w, c) = b.dims();
    let mut out = Band::zeros(height, width, c);
    for y in 0..height {
        for x in 0..width {
            let inside = y < h && x < w;
            if !inside && mode == PadMode::Zero {
                continue;
            }
            let (sy, sx) = (y.min(h - 1), x.min(w - 1));
            let dst = (y * width + x) * c;
            let src = (sy * w + sx) * c;
            out.data[dst..dst + c].copy_from_slice(&b.data[src..src + c]);
        }
    }
    out
}

pub(crate) fn crop_band(b: &Band, height: usize, width: usize) -> Band {
    let (_, w, c) = b.dims();
    let mut out = Band::zeros(height, width, c);
    for y in 0..height {
        out.data[y * width * c..(y + 1) * width * c].copy_from_slice(&b.data[y * w * c..(y * w + width) * c]);
    }
    out
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Maps level-`k` approximation coefficients of a unit-range image from
/// `[0, 2^k]` to `[-1, 1]`.
pub fn normalize_approx(b: &Band, k: usize) -> Band {
    let s = 2f32.powi(1 - k as i32);
    b.map(|v| v * s - 1.0)
}

pub fn denormalize_approx(b: &Band, k: usize) -> Band {
    let s = 2f32.powi(k as i32 - 1);
    b.map(|v| (v + 1.0) * s)
}

/// Sampling settings for [`enhance`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnhanceConfig {
    pub sampler: SamplerConfig,
    pub seed: u64,
}

/// Checks that `img` fits the model's channel count and minimum size.
pub fn check_compatible(img: &ImageTensor, cfg: &ModelConfig) -> Result<()> {
    if img.channels() != cfg.image_channels {
        return Err(Error::Config(format!(
            "model expects {} channels, image has {}",
            cfg.image_channels,
            img.channels()
        )));
    }
    let min = cfg.min_image_side();
    if img.height() < min || img.width() < min {
        return Err(Error::Config(format!(
            "image {}x{} is smaller than {min}x{min} required by {} wavelet levels",
            img.height(),
            img.width(),
            cfg.wavelet_levels
        )));
    }
    Ok(())
}

/// Decomposes `low`, restores the approximation band by implicit sampling
/// conditioned on it, refines the finest detail bands, and reconstructs.
pub fn enhance(low: &ImageTensor, model: &Model, cfg: &EnhanceConfig) -> Result<ImageTensor> {
    let mc = &model.config;
    check_compatible(low, mc)?;
    let k = mc.wavelet_levels;
    let sched = mc.schedule.build()?;
    cfg.sampler.validate(sched.steps())?;
    let mut pyr = dwt2(low, k)?;

    if mc.use_cnm {
        let (ah, aw, _) = pyr.approx.dims();
        let padded = pad_band(&pyr.approx, round_up(ah, 4), round_up(aw, 4), PadMode::Edge);
        let cond = bands_to_nchw(&[&normalize_approx(&padded, k)])?;
        let x0 = sample_from_seed(cond.shape(), &sched, &cfg.sampler, cfg.seed, |x, t| {
            cnm_predict_noise(x, &[t], &cond, &model.params, &mc.cnm)
        })?;
        let restored = denormalize_approx(&nchw_to_band(&x0, 0)?, k);
        pyr.approx = crop_band(&restored, ah, aw);
    }

    if mc.use_esm {
        let fine = &pyr.details[0];
        let (dh, dw, _) = fine.v.dims();
        let p = mc.esm.attention_pool;
        let (ph, pw) = (round_up(dh, p), round_up(dw, p));
        let pad = |b: &Band| bands_to_nchw(&[&pad_band(b, ph, pw, PadMode::Zero)]);
        let (v, h, d) = (pad(&fine.v)?, pad(&fine.h)?, pad(&fine.d)?);
        let [v, h, d] = esm_apply([&v, &h, &d], &model.params, &mc.esm)?;
        let unpad = |t: &Tensor<f32>| -> Result<Band> { Ok(crop_band(&nchw_to_band(t, 0)?, dh, dw)) };
        pyr.details[0] = DetailBands { v: unpad(&v)?, h: unpad(&h)?, d: unpad(&d)? };
    }

    idwt2(&pyr)?.to_image_clamped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::scenes;
    use crate::net::{CnmConfig, EsmConfig};

    fn toy_config() -> ModelConfig {
        ModelConfig {
            cnm: CnmConfig {
                base_channels: 8,
                num_transformer_blocks: 1,
                num_heads: 2,
                timestep_embed_dim: 8,
                condition_channels: 3,
            },
            esm: EsmConfig { block_channels: 8, num_heads: 2, ..EsmConfig::default() },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_round_trip() {
        let img = scenes::generate(6, 5, 3, 1);
        let b = Band::from_image(&img);
        let t = bands_to_nchw(&[&b, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 6, 5]);
        assert_eq!(t.data()[30 + 7], img.get(1, 2, 1));
        assert_eq!(nchw_to_band(&t, 1).unwrap(), b);
    }

    #[test]
    fn normalisation_round_trip() {
        let img = scenes::generate(16, 16, 3, 2);
        for k in 1..=3 {
            let a = dwt2(&img, k).unwrap().approx;
            let n = normalize_approx(&a, k);
            assert!(n.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
            let back = denormalize_approx(&n, k);
            let err = a.data.iter().zip(&back.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(err < 1e-5);
        }
    }

    #[test]
    fn pad_and_crop() {
        let b = Band::from_image(&scenes::generate(3, 2, 1, 3));
        let e = pad_band(&b, 4, 4, PadMode::Edge);
        assert_eq!(e.data[3], b.data[1]);
        assert_eq!(e.data[15], b.data[5]);
        let z = pad_band(&b, 4, 4, PadMode::Zero);
        assert_eq!(z.data[3], 0.0);
        assert_eq!(crop_band(&e, 3, 2), b);
    }

    #[test]
    fn untrained_model_enhances_any_size_deterministically() {
        let model = Model::new(toy_config(), 1).unwrap();
        for (h, w) in [(64, 64), (37, 50)] {
            let img = scenes::generate(h, w, 3, 4);
            let cfg = EnhanceConfig::default();
            let a = enhance(&img, &model, &cfg).unwrap();
            let b = enhance(&img, &model, &cfg).unwrap();
            assert_eq!((a.height(), a.width(), a.channels()), (h, w, 3));
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn incompatible_inputs_are_config_errors() {
        let model = Model::new(toy_config(), 1).unwrap();
        let gray = scenes::generate(32, 32, 1, 4);
        assert!(matches!(enhance(&gray, &model, &EnhanceConfig::default()), Err(Error::Config(_))));
        let tiny = scenes::generate(6, 32, 3, 4);
        assert!(matches!(enhance(&tiny, &model, &EnhanceConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn pass_through_model_reconstructs_input() {
        let cfg = ModelConfig { use_cnm: false, ..toy_config() };
        let model = Model::new(cfg, 1).unwrap();
        let img = scenes::generate(20, 28, 3, 5);
        let out = enhance(&img, &model, &EnhanceConfig::default()).unwrap();
        let err = img.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-5);
    }
}
