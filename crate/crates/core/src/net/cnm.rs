use rand::Rng;

use super::layers::{attention_block, conv, init_attention, init_conv, init_linear, layer_norm, linear, Init};
use super::CnmConfig;
use crate::error::{Error, Result};
use crate::nn::{BroadcastMode, Conv2dSpec, Graph, ParamStore, Real, Tensor, Var};

const SAME: Conv2dSpec = Conv2dSpec { stride: 1, dilation: 1, groups: 1 };
const DOWN: Conv2dSpec = Conv2dSpec { stride: 2, dilation: 1, groups: 1 };

/// Sinusoidal embedding of each timestep, shape `(t.len(), dim)`.
/// The first half holds sines and the second half cosines.
pub fn timestep_embedding<T: Real>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let freqs = (0..half).map(|i| (-(10_000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| step as f64 * f).collect();
        data.extend(args.iter().map(|a| T::lit(a.sin())));
        data.extend(args.iter().map(|a| T::lit(a.cos())));
    }
    Tensor::from_vec(vec![t.len(), dim], data).expect("embedding shape")
}

/// Registers every CNM parameter under `cnm.`; the output convolution is
/// zero-initialised.
pub fn init_cnm<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &CnmConfig,
    image_channels: usize,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let c = cfg.base_channels;
    let e = cfg.timestep_embed_dim;
    init_conv(store, "cnm.stem", image_channels + cfg.condition_channels, c, 3, 1, Init::He, rng)?;
    init_conv(store, "cnm.down1", c, c, 3, 1, Init::He, rng)?;
    init_conv(store, "cnm.down2", c, c, 3, 1, Init::He, rng)?;
    init_linear(store, "cnm.temb1", e, e, Init::He, rng)?;
    init_linear(store, "cnm.temb2", e, c, Init::Lecun, rng)?;
    for i in 0..cfg.num_transformer_blocks {
        let p = format!("cnm.block{i}");
        init_attention(store, &format!("{p}.attn"), c, rng)?;
        store.add_layer_norm(&format!("{p}.ffn.ln"), c)?;
        init_linear(store, &format!("{p}.ffn.fc1"), c, 2 * c, Init::He, rng)?;
        init_linear(store, &format!("{p}.ffn.fc2"), 2 * c, c, Init::Lecun, rng)?;
    }
    init_conv(store, "cnm.up1", 2 * c, c, 3, 1, Init::He, rng)?;
    init_conv(store, "cnm.up2", 2 * c, c, 3, 1, Init::He, rng)?;
    init_conv(store, "cnm.out", c, image_channels, 3, 1, Init::Zero, rng)
}

/// Noise prediction for `x_t` at per-item timesteps `t`, conditioned on
/// `condition`. Output has the shape of `x_t`.
pub fn cnm_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    cfg: &CnmConfig,
    x_t: Var,
    t: &[usize],
    condition: Var,
) -> Result<Var> {
    let (b, _, h, w) = g.value(x_t).dims4()?;
    let (cb, cc, ch, cw) = g.value(condition).dims4()?;
    if (cb, ch, cw) != (b, h, w) || cc != cfg.condition_channels {
        return Err(Error::Shape(format!("condition {:?} does not match x_t {:?}", g.shape(condition), g.shape(x_t))));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::Shape(format!("CNM input {h}x{w} must be divisible by 4")));
    }
    if t.len() != b {
        return Err(Error::Shape(format!("{} timesteps for batch of {b}", t.len())));
    }
    let input = g.concat(&[x_t, condition], 1)?;
    let e0 = conv(g, store, input, "cnm.stem", SAME)?;
    let e0 = g.relu(e0);
    let e1 = conv(g, store, e0, "cnm.down1", DOWN)?;
    let e1 = g.relu(e1);
    let e2 = conv(g, store, e1, "cnm.down2", DOWN)?;
    let e2 = g.relu(e2);

    let emb = g.constant(timestep_embedding(t, cfg.timestep_embed_dim));
    let emb = linear(g, store, emb, "cnm.temb1")?;
    let emb = g.relu(emb);
    let emb = linear(g, store, emb, "cnm.temb2")?;

    let mut tokens = g.to_tokens(e2)?;
    tokens = g.add_broadcast(tokens, emb, BroadcastMode::Tokens)?;
    for i in 0..cfg.num_transformer_blocks {
        let p = format!("cnm.block{i}");
        let a = attention_block(g, store, tokens, None, cfg.num_heads, &format!("{p}.attn"))?;
        tokens = g.add(tokens, a)?;
        let n = layer_norm(g, store, tokens, &format!("{p}.ffn.ln"))?;
        let f = linear(g, store, n, &format!("{p}.ffn.fc1"))?;
        let f = g.relu(f);
        let f = linear(g, store, f, &format!("{p}.ffn.fc2"))?;
        tokens = g.add(tokens, f)?;
    }
    let d = g.from_tokens(tokens, h / 4, w / 4)?;

    let u1 = g.upsample_nearest(d, 2)?;
    let u1 = g.concat(&[u1, e1], 1)?;
    let u1 = conv(g, store, u1, "cnm.up1", SAME)?;
    let u1 = g.relu(u1);
    let u2 = g.upsample_nearest(u1, 2)?;
    let u2 = g.concat(&[u2, e0], 1)?;
    let u2 = conv(g, store, u2, "cnm.up2", SAME)?;
    let u2 = g.relu(u2);
    conv(g, store, u2, "cnm.out", SAME)
}

/// Inference wrapper around [`cnm_forward`].
pub fn cnm_predict_noise<T: Real>(
    x_t: &Tensor<T>,
    t: &[usize],
    condition: &Tensor<T>,
    store: &ParamStore<T>,
    cfg: &CnmConfig,
) -> Result<Tensor<T>> {
    let mut g = Graph::new(false);
    let x = g.constant(x_t.clone());
    let c = g.constant(condition.clone());
    let out = cnm_forward(&mut g, store, cfg, x, t, c)?;
    Ok(g.value(out).clone())
}
