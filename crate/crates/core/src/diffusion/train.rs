use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{bands_to_nchw, normalize_approx};
use super::sampler::gaussian_tensor;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::imaging::{extract_patch_pairs, ImageTensor};
use crate::net::{cnm_forward, esm_forward, training_loss_graph, Model, ModelConfig};
use crate::nn::{AdamConfig, Graph, OptimizerState, ParamStore, Real, Tensor, Var};
use crate::rng::{SeedSplitter, StreamRng};
use crate::wavelet::{dwt2, Band, WaveletPyramid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub l1_weight: f64,
    pub optimizer: AdamConfig,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 500,
            batch_size: 4,
            patch_size: 64,
            l1_weight: crate::net::DEFAULT_L1_WEIGHT,
            optimizer: AdamConfig::default(),
            log_every: 10,
            checkpoint_every: 500,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &crate::net::ModelConfig) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("batch_size, log_every and checkpoint_every must be at least 1".into()));
        }
        if !(self.l1_weight >= 0.0) {
            return Err(Error::Config(format!("l1_weight must be non-negative, got {}", self.l1_weight)));
        }
        let mut unit = model.min_image_side();
        if model.use_esm {
            unit = lcm(unit, 2 * model.esm.attention_pool);
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return Err(Error::Config(format!("patch_size {} must be a positive multiple of {unit}", self.patch_size)));
        }
        if !model.use_cnm && !model.use_esm {
            return Err(Error::Config("model has no trainable component".into()));
        }
        Ok(())
    }
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

/// Mean loss over a window of iterations ending at `iter` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRecord {
    pub iter: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub enum TrainEvent<'a> {
    Log(&'a LogRecord),
    Checkpoint { iter: usize, model: &'a Model },
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Loss of every iteration.
    pub losses: Vec<f64>,
    pub log: Vec<LogRecord>,
}

struct Streams {
    pairs: StreamRng,
    crop: StreamRng,
    timestep: StreamRng,
    noise: StreamRng,
}

/// Trains `model` on paired `(low, high)` images. Every random draw comes
/// from a named stream of `cfg.seed`.
pub fn train(
    model: &mut Model,
    pairs: &[(ImageTensor, ImageTensor)],
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate(&model.config)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    for (low, high) in pairs {
        if low.channels() != model.config.image_channels || !low.same_shape(high) {
            return Err(Error::Config(format!(
                "training pair {}x{}x{} / {}x{}x{} does not fit a {}-channel model",
                low.height(),
                low.width(),
                low.channels(),
                high.height(),
                high.width(),
                high.channels(),
                model.config.image_channels
            )));
        }
    }
    let sched = model.config.schedule.build()?;
    let split = SeedSplitter::new(cfg.seed);
    let mut streams = Streams {
        pairs: split.stream("pairs"),
        crop: split.stream("crop"),
        timestep: split.stream("timestep"),
        noise: split.stream("noise"),
    };
    let mut opt = OptimizerState::new(cfg.optimizer, &model.params);
    let mut report = TrainReport::default();
    let mut window_start = 0;
    for it in 0..cfg.iters {
        let mut lows = Vec::with_capacity(cfg.batch_size);
        let mut highs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = streams.pairs.gen_range(0..pairs.len());
            let seed = streams.crop.gen::<u64>();
            let (low, high) = &pairs[idx];
            let (l, h) = extract_patch_pairs(low, high, cfg.patch_size, 1, seed)?
                .pop()
                .ok_or_else(|| Error::Internal("no patch extracted".into()))?;
            lows.push(l);
            highs.push(h);
        }
        let lr = cfg.optimizer.learning_rate(opt.step_count());
        let loss = train_step(model, &mut opt, &sched, &lows, &highs, cfg.l1_weight, &mut streams)?;
        report.losses.push(loss);
        let done = it + 1;
        if done % cfg.log_every == 0 || done == cfg.iters {
            let window = &report.losses[window_start..];
            let rec = LogRecord { iter: done, mean_loss: window.iter().sum::<f64>() / window.len() as f64, lr };
            window_start = done;
            report.log.push(rec);
            on_event(TrainEvent::Log(&rec))?;
        }
        if done % cfg.checkpoint_every == 0 && done != cfg.iters {
            on_event(TrainEvent::Checkpoint { iter: done, model })?;
        }
    }
    on_event(TrainEvent::Checkpoint { iter: cfg.iters, model })?;
    Ok(report)
}

fn detail_vars<T: Real>(g: &mut Graph<T>, pyrs: &[WaveletPyramid], level: usize) -> Result<[Var; 3]> {
    let pick = |f: fn(&crate::wavelet::DetailBands) -> &Band| -> Result<Tensor<T>> {
        let bands: Vec<&Band> = pyrs.iter().map(|p| f(&p.details[level])).collect();
        Ok(bands_to_nchw(&bands)?.cast())
    };
    let v = pick(|d| &d.v)?;
    let h = pick(|d| &d.h)?;
    let d = pick(|d| &d.d)?;
    Ok([g.constant(v), g.constant(h), g.constant(d)])
}

/// Noise draws for one batch: a timestep per item and `eps` shaped like the
/// batched approximation band. Only needed when the CNM is enabled.
#[derive(Debug, Clone)]
pub struct NoiseDraw<T> {
    pub timesteps: Vec<usize>,
    pub eps: Tensor<T>,
}

/// Records the full training objective for one batch of equal-sized patches
/// on `g` and returns the scalar loss.
///
/// With the CNM, the reference approximation band is noised at the drawn
/// timesteps and the predictor, conditioned on the low-light band, yields
/// both the noise term and a clean estimate; the estimate, the (optionally
/// ESM-refined) finest low-light details and the coarser low-light details
/// are synthesised back to an image for the L1 term. Without the CNM the
/// low-light approximation passes through and only the L1 term remains.
#[allow(clippy::too_many_arguments)]
pub fn training_graph<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    mc: &ModelConfig,
    sched: &NoiseSchedule,
    lows: &[ImageTensor],
    highs: &[ImageTensor],
    noise: Option<&NoiseDraw<T>>,
    l1_weight: f64,
) -> Result<Var> {
    let k = mc.wavelet_levels;
    let low_pyr = lows.iter().map(|i| dwt2(i, k)).collect::<Result<Vec<_>>>()?;
    let high_pyr = highs.iter().map(|i| dwt2(i, k)).collect::<Result<Vec<_>>>()?;

    let mut noise_terms = None;
    let approx = if mc.use_cnm {
        let draw = noise.ok_or_else(|| Error::Argument("CNM training needs timesteps and noise".into()))?;
        let ts = &draw.timesteps;
        if ts.len() != lows.len() {
            return Err(Error::Shape(format!("{} timesteps for {} items", ts.len(), lows.len())));
        }
        for &t in ts {
            sched.check_timestep(t)?;
        }
        let norm = |ps: &[WaveletPyramid]| -> Result<Tensor<T>> {
            let bands: Vec<Band> = ps.iter().map(|p| normalize_approx(&p.approx, k)).collect();
            Ok(bands_to_nchw(&bands.iter().collect::<Vec<_>>())?.cast())
        };
        let x0 = norm(&high_pyr)?;
        let cond = norm(&low_pyr)?;
        if draw.eps.shape() != x0.shape() {
            return Err(Error::Shape(format!("noise {:?} vs band {:?}", draw.eps.shape(), x0.shape())));
        }
        let per = x0.numel() / lows.len();
        let mut xt = x0;
        for (i, v) in xt.data_mut().iter_mut().enumerate() {
            let ab = sched.alpha_bar(ts[i / per]);
            *v = T::lit(ab.sqrt()) * *v + T::lit((1.0 - ab).sqrt()) * draw.eps.data()[i];
        }
        let xt_v = g.constant(xt);
        let cond_v = g.constant(cond);
        let pred = cnm_forward(g, store, &mc.cnm, xt_v, ts, cond_v)?;
        let inv: Vec<T> = ts.iter().map(|&t| T::lit(1.0 / sched.alpha_bar(t).sqrt())).collect();
        let coef: Vec<T> =
            ts.iter().map(|&t| T::lit((1.0 - sched.alpha_bar(t)).sqrt() / sched.alpha_bar(t).sqrt())).collect();
        let a = g.scale_batch(xt_v, inv)?;
        let b = g.scale_batch(pred, coef)?;
        let x0_hat = g.sub(a, b)?;
        let eps_v = g.constant(draw.eps.clone());
        noise_terms = Some((pred, eps_v));
        let s = T::lit(2f64.powi(k as i32 - 1));
        g.affine(x0_hat, s, s)
    } else {
        let low_approx: Vec<&Band> = low_pyr.iter().map(|p| &p.approx).collect();
        g.constant(bands_to_nchw(&low_approx)?.cast())
    };

    let mut fine = detail_vars(g, &low_pyr, 0)?;
    if mc.use_esm {
        fine = esm_forward(g, store, &mc.esm, fine)?;
    }
    let mut cur = approx;
    for level in (0..k).rev() {
        let [v, h, d] = if level == 0 { fine } else { detail_vars(g, &low_pyr, level)? };
        cur = g.haar_synthesis([cur, v, h, d])?;
    }
    let high_bands: Vec<Band> = highs.iter().map(Band::from_image).collect();
    let reference = g.constant(bands_to_nchw(&high_bands.iter().collect::<Vec<_>>())?.cast());
    match noise_terms {
        Some((pred, eps)) => training_loss_graph(g, pred, eps, cur, reference, l1_weight),
        None => g.l1(cur, reference),
    }
}

fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState<f32>,
    sched: &NoiseSchedule,
    lows: &[ImageTensor],
    highs: &[ImageTensor],
    l1_weight: f64,
    streams: &mut Streams,
) -> Result<f64> {
    let mc = &model.config;
    let draw = if mc.use_cnm {
        let timesteps: Vec<usize> = (0..lows.len()).map(|_| streams.timestep.gen_range(1..=sched.steps())).collect();
        let side = |n: usize| n >> mc.wavelet_levels;
        let shape = [lows.len(), mc.image_channels, side(lows[0].height()), side(lows[0].width())];
        let eps = gaussian_tensor::<f32>(&shape, &mut streams.noise);
        Some(NoiseDraw { timesteps, eps })
    } else {
        None
    };
    let mut g = Graph::<f32>::new(true);
    let loss = training_graph(&mut g, &model.params, mc, sched, lows, highs, draw.as_ref(), l1_weight)?;
    let value = f64::from(g.value(loss).data()[0]);
    if !value.is_finite() {
        return Err(Error::NonFiniteGradient("loss".into()));
    }
    model.params.zero_grad();
    g.backward(loss, &mut model.params)?;
    let updates = g.take_buffer_updates();
    model.params.apply_buffer_updates(updates)?;
    opt.step(&mut model.params)?;
    Ok(value)
}
