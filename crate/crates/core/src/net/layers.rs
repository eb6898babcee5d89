use rand::Rng;

use crate::error::Result;
use crate::nn::{Conv2dSpec, Graph, ParamStore, Real, Var};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    He,
    Lecun,
    Zero,
}

fn init_weight<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    init: Init,
    rng: &mut R,
) -> Result<()> {
    match init {
        Init::He => store.add_he(name, shape, fan_in, rng),
        Init::Lecun => store.add_lecun(name, shape, fan_in, rng),
        Init::Zero => store.add_zeros(name, shape),
    }
}

/// `name.w: (cout, cin/groups, k, k)` and `name.b: (cout)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn init_conv<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    groups: usize,
    init: Init,
    rng: &mut R,
) -> Result<()> {
    let per_group = cin / groups;
    init_weight(store, &format!("{name}.w"), &[cout, per_group, k, k], per_group * k * k, init, rng)?;
    store.add_zeros(&format!("{name}.b"), &[cout])
}

pub(crate) fn conv<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    name: &str,
    spec: Conv2dSpec,
) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    g.conv2d(x, w, Some(b), spec)
}

/// `name.w: (din, dout)` and `name.b: (dout)`.
pub(crate) fn init_linear<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    din: usize,
    dout: usize,
    init: Init,
    rng: &mut R,
) -> Result<()> {
    init_weight(store, &format!("{name}.w"), &[din, dout], din, init, rng)?;
    store.add_zeros(&format!("{name}.b"), &[dout])
}

pub(crate) fn linear<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, name: &str) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    g.linear(x, w, Some(b))
}

pub(crate) fn layer_norm<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, name: &str) -> Result<Var> {
    let gamma = g.param(store, &format!("{name}.gamma"))?;
    let beta = g.param(store, &format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta)
}

pub(crate) fn init_attention<T: Real, R: Rng>(
    store: &mut ParamStore<T>,
    name: &str,
    dim: usize,
    rng: &mut R,
) -> Result<()> {
    store.add_layer_norm(&format!("{name}.ln"), dim)?;
    for proj in ["q", "k", "v", "proj"] {
        init_linear(store, &format!("{name}.{proj}"), dim, dim, Init::Lecun, rng)?;
    }
    Ok(())
}

/// Pre-norm multi-head attention without the residual add. Keys and values
/// come from `context` when given, otherwise from `x` itself.
pub(crate) fn attention_block<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: Var,
    context: Option<Var>,
    heads: usize,
    name: &str,
) -> Result<Var> {
    let ln = format!("{name}.ln");
    let xn = layer_norm(g, store, x, &ln)?;
    let cn = match context {
        Some(c) => layer_norm(g, store, c, &ln)?,
        None => xn,
    };
    let q = linear(g, store, xn, &format!("{name}.q"))?;
    let k = linear(g, store, cn, &format!("{name}.k"))?;
    let v = linear(g, store, cn, &format!("{name}.v"))?;
    let a = g.attention(q, k, v, heads)?;
    linear(g, store, a, &format!("{name}.proj"))
}
