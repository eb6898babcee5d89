use rand::Rng;

use super::layers::{attention_block, conv, init_attention, init_conv, Init};
use super::{AttentionMode, EsmConfig};
use crate::error::{Error, Result};
use crate::nn::{Conv2dSpec, Graph, ParamStore, Real, Tensor, Var};

pub(crate) const BANDS: [&str; 3] = ["v", "h", "d"];

const SAME: Conv2dSpec = Conv2dSpec { stride: 1, dilation: 1, groups: 1 };

/// Parameters of one dilated residual block; the last pointwise
/// convolution is zero-initialised so a fresh block is the identity.
pub fn init_dilated_residual_block<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    channels: usize,
    rng: &mut R,
) -> Result<()> {
    for (i, last) in [(1, false), (2, true)] {
        store.add_batch_norm(&format!("{prefix}.bn{i}"), channels)?;
        init_conv(store, &format!("{prefix}.dw{i}"), channels, channels, 3, channels, Init::He, rng)?;
        let init = if last { Init::Zero } else { Init::He };
        init_conv(store, &format!("{prefix}.pw{i}"), channels, channels, 1, 1, init, rng)?;
    }
    Ok(())
}

/// `Y = X + Conv(ReLU(BN(Conv(ReLU(BN(X))))))`, where each `Conv` is a
/// dilated depthwise 3x3 followed by a pointwise 1x1.
pub fn dilated_residual_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    prefix: &str,
    dilation: usize,
) -> Result<Var> {
    let (_, c, _, _) = g.value(x).dims4()?;
    let expected = store.value(&format!("{prefix}.pw1.b"))?.numel();
    if c != expected {
        return Err(Error::Shape(format!("block `{prefix}` expects {expected} channels, got {c}")));
    }
    let depthwise = Conv2dSpec { stride: 1, dilation, groups: c };
    let mut y = x;
    for i in 1..=2 {
        y = g.batch_norm(store, y, &format!("{prefix}.bn{i}"))?;
        y = g.relu(y);
        y = conv(g, store, y, &format!("{prefix}.dw{i}"), depthwise)?;
        y = conv(g, store, y, &format!("{prefix}.pw{i}"), SAME)?;
    }
    g.add(x, y)
}

/// Registers every ESM parameter under `esm.` for bands with
/// `band_channels` channels each. The fusion convolution is zero-initialised.
pub fn init_esm<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &EsmConfig,
    band_channels: usize,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let c = cfg.block_channels;
    for band in BANDS {
        init_conv(store, &format!("esm.{band}.in"), band_channels, c, 3, 1, Init::He, rng)?;
        for j in 0..cfg.dilation_rates.len() {
            init_dilated_residual_block(store, &format!("esm.{band}.block{j}"), c, rng)?;
        }
        init_attention(store, &format!("esm.{band}.attn"), c, rng)?;
    }
    init_conv(store, "esm.fuse", 3 * c, 3 * band_channels, 3, 1, Init::Zero, rng)
}

/// Refines the `[V, H, D]` detail bands, each `(b, c, h, w)` with `h` and
/// `w` divisible by the attention pooling factor.
pub fn esm_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &EsmConfig,
    bands: [Var; 3],
) -> Result<[Var; 3]> {
    let shape = g.shape(bands[0]).to_vec();
    if bands.iter().any(|&b| g.shape(b) != shape.as_slice()) {
        return Err(Error::Shape("ESM bands must share one shape".into()));
    }
    let (_, bc, h, w) = g.value(bands[0]).dims4()?;
    let p = cfg.attention_pool;
    if h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("ESM band {h}x{w} not divisible by pooling factor {p}")));
    }

    let mut feats = Vec::with_capacity(3);
    for (band, &x) in BANDS.iter().zip(&bands) {
        let mut f = conv(g, store, x, &format!("esm.{band}.in"), SAME)?;
        for (j, &dil) in cfg.dilation_rates.iter().enumerate() {
            f = dilated_residual_block(g, store, f, &format!("esm.{band}.block{j}"), dil)?;
        }
        feats.push(f);
    }

    let mut tokens = Vec::with_capacity(3);
    for &f in &feats {
        let pooled = g.avg_pool(f, p)?;
        tokens.push(g.to_tokens(pooled)?);
    }
    let mut mixed = Vec::with_capacity(3);
    for (i, band) in BANDS.iter().enumerate() {
        let context = match cfg.attention {
            AttentionMode::Cross => {
                let others: Vec<Var> = (0..3).filter(|&j| j != i).map(|j| tokens[j]).collect();
                Some(g.concat(&others, 1)?)
            }
            AttentionMode::SelfAttn => None,
        };
        let a = attention_block(g, store, tokens[i], context, cfg.num_heads, &format!("esm.{band}.attn"))?;
        let a = g.from_tokens(a, h / p, w / p)?;
        let a = g.upsample_nearest(a, p)?;
        mixed.push(g.add(feats[i], a)?);
    }

    let cat = g.concat(&mixed, 1)?;
    let fused = conv(g, store, cat, "esm.fuse", SAME)?;
    let mut out = [bands[0]; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let delta = g.narrow(fused, 1, i * bc, bc)?;
        *slot = g.add(bands[i], delta)?;
    }
    Ok(out)
}

/// Inference wrapper around [`esm_forward`]; batch norm uses running statistics.
pub fn esm_apply<T: Real>(bands: [&Tensor<T>; 3], store: &ParamStore<T>, cfg: &EsmConfig) -> Result<[Tensor<T>; 3]> {
    let mut g = Graph::new(false);
    let vars = bands.map(|b| g.constant(b.clone()));
    let out = esm_forward(&mut g, store, cfg, vars)?;
    Ok(out.map(|v| g.value(v).clone()))
}
