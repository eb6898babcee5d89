use super::kernels::{self, AttnGeom, Conv2dSpec};
use super::{ParamStore, Real, Tensor, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM, LAYER_NORM_EPS};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How a `(batch, dim)` vector is broadcast onto a larger tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BroadcastMode {
    /// `x: (batch, tokens, dim)`, added to every token.
    Tokens,
    /// `x: (batch, channels, h, w)`, added to every pixel of a channel.
    Channels,
}

enum Op<T> {
    Leaf,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBatch(Var, Vec<T>),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    Linear { x: Var, w: Var, b: Option<Var> },
    AddBroadcast { x: Var, e: Var, mode: BroadcastMode },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    TransposeLast2(Var),
    Upsample { x: Var, factor: usize },
    AvgPool { x: Var, factor: usize },
    Attention { q: Var, k: Var, v: Var, geom: AttnGeom, probs: Vec<T> },
    HaarSynth { bands: [Var; 4] },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::ScaleBatch(x, _)
            | Op::Relu(x)
            | Op::Abs(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::TransposeLast2(x)
            | Op::Narrow { x, .. }
            | Op::Upsample { x, .. }
            | Op::AvgPool { x, .. } => vec![*x],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::AddBroadcast { x, e, .. } => vec![*x, *e],
            Op::LayerNorm { x, gamma, beta, .. } | Op::BatchNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::HaarSynth { bands } => bands.to_vec(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Batch-norm layers in training mode do not mutate the parameter store
/// during the forward pass; their running-statistic updates are queued and
/// applied with [`ParamStore::apply_buffer_updates`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    backward_done: bool,
    buffer_updates: Vec<(String, Tensor<T>)>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: {a:?} vs {b:?}"))
}

impl<T: Real> Graph<T> {
    pub fn new(training: bool) -> Self {
        Self { nodes: Vec::new(), training, backward_done: false, buffer_updates: Vec::new() }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Brings a named parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store.index_of(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
        let p = store.by_index(idx);
        let op = if p.trainable { Op::Param(idx) } else { Op::Leaf };
        Ok(self.push(p.value.clone(), op))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let v = self.value(x).map(|p| scale * p + shift);
        self.push(v, Op::Scale(x, scale))
    }

    /// Multiplies batch item `b` by `coeffs[b]`.
    pub fn scale_batch(&mut self, x: Var, coeffs: Vec<T>) -> Result<Var> {
        let t = self.value(x);
        let b = *t.shape().first().unwrap_or(&0);
        if coeffs.len() != b || b == 0 {
            return Err(Error::Shape(format!("{} coefficients for batch of {b}", coeffs.len())));
        }
        let per = t.numel() / b;
        let data = t.data().iter().enumerate().map(|(i, &v)| v * coeffs[i / per]).collect();
        let v = Tensor::from_vec(t.shape().to_vec(), data)?;
        Ok(self.push(v, Op::ScaleBatch(x, coeffs)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|p| p.max(T::zero()));
        self.push(v, Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(T::abs);
        self.push(v, Op::Abs(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::lit(t.numel().max(1) as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// `mean((a - b)^2)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// `mean(|a - b|)`.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let ad = self.abs(d);
        Ok(self.mean(ad))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = kernels::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn add_broadcast(&mut self, x: Var, e: Var, mode: BroadcastMode) -> Result<Var> {
        let (xt, et) = (self.value(x), self.value(e));
        let ok = match (mode, xt.shape(), et.shape()) {
            (BroadcastMode::Tokens, &[b, _, d], &[eb, ed]) => b == eb && d == ed,
            (BroadcastMode::Channels, &[b, c, _, _], &[eb, ec]) => b == eb && c == ec,
            _ => false,
        };
        if !ok {
            return Err(shape_err("add_broadcast", xt.shape(), et.shape()));
        }
        let mut out = xt.clone();
        let s = xt.shape();
        let ed = et.data();
        match mode {
            BroadcastMode::Tokens => {
                let (n, d) = (s[1], s[2]);
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    let b = i / (n * d);
                    *v += ed[b * d + i % d];
                }
            }
            BroadcastMode::Channels => {
                let plane = s[2] * s[3];
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v += ed[i / plane];
                }
            }
        }
        Ok(self.push(out, Op::AddBroadcast { x, e, mode }))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xt = self.value(x);
        let d = *xt.shape().last().ok_or_else(|| Error::Shape("layer_norm on scalar".into()))?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(shape_err("layer_norm", xt.shape(), self.value(gamma).shape()));
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xt.numel() / d;
        let mut xhat = vec![T::zero(); xt.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xt.numel()];
        let eps = T::lit(LAYER_NORM_EPS);
        let nd = T::lit(d as f64);
        for r in 0..rows {
            let row = &xt.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / nd;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nd;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let xh = (row[i] - mean) * is;
                xhat[r * d + i] = xh;
                out[r * d + i] = g[i] * xh + bt[i];
            }
        }
        let v = Tensor::from_vec(xt.shape().to_vec(), out)?;
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Batch normalisation over `(batch, h, w)` per channel.
    ///
    /// In training mode batch statistics are used and the running statistics
    /// stored under `running_prefix.running_mean/var` are queued for update
    /// with momentum 0.9; in evaluation mode the running statistics are used.
    pub fn batch_norm(&mut self, store: &ParamStore<T>, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(store, &format!("{prefix}.gamma"))?;
        let beta = self.param(store, &format!("{prefix}.beta"))?;
        let rm_name = format!("{prefix}.running_mean");
        let rv_name = format!("{prefix}.running_var");
        let rm = store.value(&rm_name)?;
        let rv = store.value(&rv_name)?;
        let (b, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).numel() != c || rm.numel() != c || rv.numel() != c {
            return Err(Error::Shape(format!("batch_norm `{prefix}` expects {c} channels")));
        }
        let plane = h * w;
        let n = b * plane;
        let eps = T::lit(BATCH_NORM_EPS);
        let xd = self.value(x).data();
        let (mean, var): (Vec<T>, Vec<T>) = if self.training {
            (0..c)
                .map(|ch| {
                    let vals = (0..b).flat_map(|bi| xd[(bi * c + ch) * plane..][..plane].iter().copied());
                    let m = vals.clone().sum::<T>() / T::lit(n as f64);
                    let v = vals.map(|u| (u - m) * (u - m)).sum::<T>() / T::lit(n as f64);
                    (m, v)
                })
                .unzip()
        } else {
            (rm.data().to_vec(), rv.data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for (i, (&u, (xh, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / plane) % c;
            *xh = (u - mean[ch]) * inv_std[ch];
            *o = g[ch] * *xh + bt[ch];
        }
        if self.training {
            let m = T::lit(BATCH_NORM_MOMENTUM);
            let unbias = if n > 1 { T::lit(n as f64 / (n as f64 - 1.0)) } else { T::one() };
            let new_rm = rm.data().iter().zip(&mean).map(|(&r, &bm)| m * r + (T::one() - m) * bm).collect();
            let new_rv = rv.data().iter().zip(&var).map(|(&r, &bv)| m * r + (T::one() - m) * bv * unbias).collect();
            self.buffer_updates.push((rm_name, Tensor::from_vec(vec![c], new_rm)?));
            self.buffer_updates.push((rv_name, Tensor::from_vec(vec![c], new_rv)?));
        }
        let shape = self.value(x).shape().to_vec();
        let v = Tensor::from_vec(shape, out)?;
        let batch_stats = self.training;
        Ok(self.push(v, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::Argument("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Shape(format!("narrow {axis}:{start}+{len} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let t = self.value(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(out, Op::Narrow { x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::Shape(format!("transpose of {s:?}")));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let out = transpose_blocks(t.data(), m, n);
        let mut shape = s.to_vec();
        let r = shape.len();
        shape.swap(r - 1, r - 2);
        let out = Tensor::from_vec(shape, out)?;
        Ok(self.push(out, Op::TransposeLast2(x)))
    }

    /// `(b, c, h, w)` feature map to `(b, h*w, c)` tokens.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let flat = self.reshape(x, &[b, c, h * w])?;
        self.transpose_last2(flat)
    }

    /// `(b, h*w, c)` tokens back to a `(b, c, h, w)` feature map.
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.transpose_last2(x)?;
        let s = self.shape(t).to_vec();
        self.reshape(t, &[s[0], s[1], h, w])
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if factor == 0 {
            return Err(Error::Argument("upsample factor 0".into()));
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for p in 0..b * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                let row = &plane[(y / factor) * w..(y / factor + 1) * w];
                for xx in 0..ow {
                    out.push(row[xx / factor]);
                }
            }
        }
        let out = Tensor::from_vec(vec![b, c, oh, ow], out)?;
        Ok(self.push(out, Op::Upsample { x, factor }))
    }

    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!("avg_pool by {factor} of {h}x{w}")));
        }
        let (oh, ow) = (h / factor, w / factor);
        let norm = T::one() / T::lit((factor * factor) as f64);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * oh + y / factor) * ow + xx / factor] += src[(p * h + y) * w + xx];
                }
            }
        }
        for v in &mut out {
            *v *= norm;
        }
        let out = Tensor::from_vec(vec![b, c, oh, ow], out)?;
        Ok(self.push(out, Op::AvgPool { x, factor }))
    }

    /// Multi-head attention over `(batch, tokens, dim)` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let geom = AttnGeom::new(self.value(q), self.value(k), self.value(v), heads)?;
        let (out, probs) = kernels::attention_forward(self.value(q), self.value(k), self.value(v), geom);
        let out = Tensor::from_vec(vec![geom.b, geom.nq, geom.d], out)?;
        Ok(self.push(out, Op::Attention { q, k, v, geom, probs }))
    }

    /// One level of orthonormal Haar synthesis on `(b, c, h, w)` bands
    /// `[A, V, H, D]`, producing `(b, c, 2h, 2w)`.
    pub fn haar_synthesis(&mut self, bands: [Var; 4]) -> Result<Var> {
        let (b, c, h, w) = self.value(bands[0]).dims4()?;
        for &v in &bands[1..] {
            self.same_shape("haar_synthesis", bands[0], v)?;
        }
        let [a, v, hh, d] = bands.map(|x| self.value(x).data());
        let half = T::lit(0.5);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); b * c * oh * ow];
        for p in 0..b * c {
            for i in 0..h {
                for j in 0..w {
                    let s = (p * h + i) * w + j;
                    let (av, vv, hv, dv) = (a[s], v[s], hh[s], d[s]);
                    let o = (p * oh + 2 * i) * ow + 2 * j;
                    out[o] = half * (av + vv + hv + dv);
                    out[o + 1] = half * (av + vv - hv - dv);
                    out[o + ow] = half * (av - vv + hv - dv);
                    out[o + ow + 1] = half * (av - vv - hv + dv);
                }
            }
        }
        let out = Tensor::from_vec(vec![b, c, oh, ow], out)?;
        Ok(self.push(out, Op::HaarSynth { bands }))
    }

    /// Reverse pass from a scalar `loss`, accumulating parameter gradients
    /// into `store`. A graph can be differentiated only once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.backward_done {
            return Err(Error::Internal("backward already ran on this graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!("loss must be a scalar, got {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            for inp in node.op.inputs() {
                if inp.0 >= id {
                    return Err(Error::Internal(format!("node {id} depends on later node {}", inp.0)));
                }
            }
            self.backprop_node(id, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>], store: &mut ParamStore<T>) -> Result<()> {
        let node = &self.nodes[id];
        let mut acc = |v: Var, f: &dyn Fn(&mut [T])| {
            if self.needs(v) {
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(idx) => store.accumulate_grad(*idx, g)?,
            Op::Add(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| add_into(s, g));
                acc(*b, &|s| s.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| {
                    for ((d, &gv), &o) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                acc(*b, &|s| {
                    for ((d, &gv), &o) in s.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &|s| s.iter_mut().zip(g).for_each(|(d, &v)| *d += *k * v)),
            Op::ScaleBatch(x, coeffs) => {
                let per = g.len() / coeffs.len();
                acc(*x, &|s| {
                    for (i, (d, &v)) in s.iter_mut().zip(g).enumerate() {
                        *d += coeffs[i / per] * v;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((d, &gv), &u) in s.iter_mut().zip(g).zip(xv) {
                        if u > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|s| {
                    for ((d, &gv), &u) in s.iter_mut().zip(g).zip(xv) {
                        if u > T::zero() {
                            *d += gv;
                        } else if u < T::zero() {
                            *d -= gv;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let k = g[0] / T::lit(self.value(*x).numel().max(1) as f64);
                acc(*x, &|s| s.iter_mut().for_each(|d| *d += k));
            }
            Op::Conv2d { x, w, b, spec } => {
                let dy = Tensor::from_vec(node.value.shape().to_vec(), g.to_vec())?;
                let need = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), &dy, *spec, need)?;
                if let Some(dx) = cg.dx {
                    acc(*x, &|s| add_into(s, dx.data()));
                }
                if let Some(dw) = cg.dw {
                    acc(*w, &|s| add_into(s, dw.data()));
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    acc(*b, &|s| add_into(s, db.data()));
                }
            }
            Op::Linear { x, w, b } => {
                let dy = Tensor::from_vec(node.value.shape().to_vec(), g.to_vec())?;
                let need = (self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b)));
                let (dx, dw, db) = kernels::linear_backward(self.value(*x), self.value(*w), &dy, need)?;
                if let Some(dx) = dx {
                    acc(*x, &|s| add_into(s, dx.data()));
                }
                if let Some(dw) = dw {
                    acc(*w, &|s| add_into(s, dw.data()));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    acc(*b, &|s| add_into(s, db.data()));
                }
            }
            Op::AddBroadcast { x, e, mode } => {
                acc(*x, &|s| add_into(s, g));
                let shape = node.value.shape();
                acc(*e, &|s| match mode {
                    BroadcastMode::Tokens => {
                        let (n, d) = (shape[1], shape[2]);
                        for (i, &v) in g.iter().enumerate() {
                            s[(i / (n * d)) * d + i % d] += v;
                        }
                    }
                    BroadcastMode::Channels => {
                        let plane = shape[2] * shape[3];
                        for (i, &v) in g.iter().enumerate() {
                            s[i / plane] += v;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                acc(*gamma, &|s| {
                    for (i, (&gv, &xh)) in g.iter().zip(xhat).enumerate() {
                        s[i % d] += gv * xh;
                    }
                });
                acc(*beta, &|s| {
                    for (i, &gv) in g.iter().enumerate() {
                        s[i % d] += gv;
                    }
                });
                acc(*x, &|s| {
                    let nd = T::lit(d as f64);
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<T> = gr.iter().zip(gam).map(|(&a, &b)| a * b).collect();
                        let m1 = dxh.iter().copied().sum::<T>() / nd;
                        let m2 = dxh.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / nd;
                        for i in 0..d {
                            s[r * d + i] += is * (dxh[i] - m1 - xr[i] * m2);
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (b, c, h, w) = node.value.dims4()?;
                let plane = h * w;
                let gam = self.value(*gamma).data();
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for (i, (&gv, &xh)) in g.iter().zip(xhat).enumerate() {
                    let ch = (i / plane) % c;
                    dg[ch] += gv * xh;
                    db[ch] += gv;
                }
                acc(*gamma, &|s| add_into(s, &dg));
                acc(*beta, &|s| add_into(s, &db));
                acc(*x, &|s| {
                    let n = T::lit((b * plane) as f64);
                    for (i, d) in s.iter_mut().enumerate() {
                        let ch = (i / plane) % c;
                        let dxh = g[i] * gam[ch];
                        *d += if *batch_stats {
                            inv_std[ch] / n * (n * dxh - gam[ch] * db[ch] - xhat[i] * gam[ch] * dg[ch])
                        } else {
                            dxh * inv_std[ch]
                        };
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.value(v).shape()[*axis] * inner;
                    acc(v, &|s| {
                        for o in 0..outer {
                            add_into(&mut s[o * chunk..(o + 1) * chunk], &g[o * total + offset..][..chunk]);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Narrow { x, axis, start } => {
                let src = self.value(*x).shape();
                let len = node.value.shape()[*axis];
                let outer: usize = src[..*axis].iter().product();
                let inner: usize = src[axis + 1..].iter().product();
                acc(*x, &|s| {
                    for o in 0..outer {
                        let base = (o * src[*axis] + start) * inner;
                        add_into(&mut s[base..base + len * inner], &g[o * len * inner..][..len * inner]);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &|s| add_into(s, g)),
            Op::TransposeLast2(x) => {
                let s_out = node.value.shape();
                let (m, n) = (s_out[s_out.len() - 2], s_out[s_out.len() - 1]);
                let back = transpose_blocks(g, m, n);
                acc(*x, &|s| add_into(s, &back));
            }
            Op::Upsample { x, factor } => {
                let (_, _, oh, ow) = node.value.dims4()?;
                let (h, w) = (oh / factor, ow / factor);
                acc(*x, &|s| {
                    for (i, &v) in g.iter().enumerate() {
                        let (p, rem) = (i / (oh * ow), i % (oh * ow));
                        let (y, xx) = (rem / ow, rem % ow);
                        s[(p * h + y / factor) * w + xx / factor] += v;
                    }
                });
            }
            Op::AvgPool { x, factor } => {
                let (_, _, oh, ow) = node.value.dims4()?;
                let (h, w) = (oh * factor, ow * factor);
                let norm = T::one() / T::lit((factor * factor) as f64);
                acc(*x, &|s| {
                    for (i, d) in s.iter_mut().enumerate() {
                        let (p, rem) = (i / (h * w), i % (h * w));
                        let (y, xx) = (rem / w, rem % w);
                        *d += norm * g[(p * oh + y / factor) * ow + xx / factor];
                    }
                });
            }
            Op::Attention { q, k, v, geom, probs } => {
                let (dq, dk, dv) =
                    kernels::attention_backward(self.value(*q), self.value(*k), self.value(*v), probs, g, *geom);
                acc(*q, &|s| add_into(s, &dq));
                acc(*k, &|s| add_into(s, &dk));
                acc(*v, &|s| add_into(s, &dv));
            }
            Op::HaarSynth { bands } => {
                let (b, c, h, w) = self.value(bands[0]).dims4()?;
                let (oh, ow) = (2 * h, 2 * w);
                let half = T::lit(0.5);
                let signs: [[T; 4]; 4] = [
                    [T::one(), T::one(), T::one(), T::one()],
                    [T::one(), T::one(), -T::one(), -T::one()],
                    [T::one(), -T::one(), T::one(), -T::one()],
                    [T::one(), -T::one(), -T::one(), T::one()],
                ];
                for (band, sign) in bands.iter().zip(signs) {
                    acc(*band, &|s| {
                        for p in 0..b * c {
                            for i in 0..h {
                                for j in 0..w {
                                    let o = (p * oh + 2 * i) * ow + 2 * j;
                                    let quad = [g[o], g[o + 1], g[o + ow], g[o + ow + 1]];
                                    let v: T = quad.iter().zip(sign).map(|(&a, b)| a * b).sum();
                                    s[(p * h + i) * w + j] += half * v;
                                }
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Transposes every trailing `m × n` block.
fn transpose_blocks<T: Real>(src: &[T], m: usize, n: usize) -> Vec<T> {
    let block = m * n;
    let mut out = vec![T::zero(); src.len()];
    if block == 0 {
        return out;
    }
    for (bi, chunk) in src.chunks(block).enumerate() {
        let dst = &mut out[bi * block..(bi + 1) * block];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = chunk[i * n + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Build = dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Projects `out` onto fixed random weights so every element matters.
    fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&mut rng, g.shape(out));
        let w = g.constant(w);
        let p = g.mul(out, w)?;
        Ok(g.sum(p))
    }

    fn loss_value(store: &ParamStore<f64>, build: &Build, training: bool) -> f64 {
        let mut g = Graph::new(training);
        let out = build(&mut g, store).unwrap();
        let l = project(&mut g, out, 99).unwrap();
        g.value(l).data()[0]
    }

    /// Central differences against the tape for every trainable element.
    fn grad_check(store: &mut ParamStore<f64>, build: &Build, training: bool) {
        let mut g = Graph::new(training);
        let out = build(&mut g, store).unwrap();
        let l = project(&mut g, out, 99).unwrap();
        store.zero_grad();
        g.backward(l, store).unwrap();
        let names: Vec<String> = store.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
        let h = 1e-4;
        for name in names {
            let analytic = store.get(&name).unwrap().grad.clone();
            for i in 0..analytic.numel() {
                let base = store.value(&name).unwrap().clone();
                let mut plus = base.clone();
                plus.data_mut()[i] += h;
                store.set_value(&name, plus).unwrap();
                let lp = loss_value(store, build, training);
                let mut minus = base.clone();
                minus.data_mut()[i] -= h;
                store.set_value(&name, minus).unwrap();
                let lm = loss_value(store, build, training);
                store.set_value(&name, base).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                assert!(rel <= 1e-5, "{name}[{i}]: analytic {a}, numeric {numeric}");
            }
        }
    }

    fn store_with(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for (name, shape) in shapes {
            s.add(name, random(&mut rng, shape)).unwrap();
        }
        s
    }

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut s = store_with(&[("x", &[5])], 1);
        let mut g = Graph::new(true);
        let x = g.param(&s, "x").unwrap();
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        g.backward(l, &mut s).unwrap();
        let p = s.get("x").unwrap();
        for (gr, v) in p.grad.data().iter().zip(p.value.data()) {
            assert_eq!(*gr, 2.0 * v);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut s = store_with(&[("x", &[3])], 2);
        let mut g = Graph::new(true);
        let _x = g.param(&s, "x").unwrap();
        let c = g.constant(Tensor::scalar(4.0));
        let l = g.sum(c);
        g.backward(l, &mut s).unwrap();
        assert!(s.get("x").unwrap().grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_twice_and_non_scalar_rejected() {
        let mut s = store_with(&[("x", &[3])], 3);
        let mut g = Graph::new(true);
        let x = g.param(&s, "x").unwrap();
        assert!(g.backward(x, &mut s).is_err());
        let l = g.sum(x);
        g.backward(l, &mut s).unwrap();
        assert!(g.backward(l, &mut s).is_err());
    }

    #[test]
    fn elementwise_gradients() {
        let mut s = store_with(&[("a", &[2, 3]), ("b", &[2, 3])], 4);
        grad_check(
            &mut s,
            &|g, s| {
                let a = g.param(s, "a")?;
                let b = g.param(s, "b")?;
                let m = g.mul(a, b)?;
                let d = g.sub(m, b)?;
                let r = g.relu(d);
                let ab = g.abs(a);
                let e = g.add(r, ab)?;
                let f = g.affine(e, 1.5, -0.25);
                let sb = g.scale_batch(f, vec![2.0, -0.5])?;
                let mse = g.mse(sb, a)?;
                let l1 = g.l1(a, b)?;
                let mean = g.mean(sb);
                let t = g.add(mse, l1)?;
                let t = g.add(t, mean)?;
                let r = g.reshape(sb, &[6])?;
                let tot = g.sum(r);
                let t = g.add(t, tot)?;
                g.reshape(t, &[1])
            },
            true,
        );
    }

    #[test]
    fn conv_gradients() {
        for spec in [
            Conv2dSpec::default(),
            Conv2dSpec { stride: 2, dilation: 1, groups: 1 },
            Conv2dSpec { stride: 1, dilation: 2, groups: 2 },
        ] {
            let mut s = store_with(&[("x", &[2, 4, 5, 6]), ("w", &[4, 4 / spec.groups, 3, 3]), ("b", &[4])], 5);
            grad_check(
                &mut s,
                &move |g, s| {
                    let x = g.param(s, "x")?;
                    let w = g.param(s, "w")?;
                    let b = g.param(s, "b")?;
                    g.conv2d(x, w, Some(b), spec)
                },
                true,
            );
        }
    }

    #[test]
    fn linear_and_broadcast_gradients() {
        let mut s = store_with(
            &[("x", &[2, 3, 4]), ("w", &[4, 5]), ("b", &[5]), ("e", &[2, 5]), ("f", &[2, 5, 2, 3]), ("c", &[2, 5])],
            6,
        );
        grad_check(
            &mut s,
            &|g, s| {
                let x = g.param(s, "x")?;
                let w = g.param(s, "w")?;
                let b = g.param(s, "b")?;
                let e = g.param(s, "e")?;
                let y = g.linear(x, w, Some(b))?;
                let y = g.add_broadcast(y, e, BroadcastMode::Tokens)?;
                let f = g.param(s, "f")?;
                let c = g.param(s, "c")?;
                let f = g.add_broadcast(f, c, BroadcastMode::Channels)?;
                let ft = g.to_tokens(f)?;
                let ft = g.narrow(ft, 1, 1, 3)?;
                g.concat(&[y, ft], 0)
            },
            true,
        );
    }

    #[test]
    fn norm_gradients() {
        let mut s = store_with(&[("x", &[2, 3, 6]), ("ln.gamma", &[6]), ("ln.beta", &[6])], 7);
        grad_check(
            &mut s,
            &|g, s| {
                let x = g.param(s, "x")?;
                let ga = g.param(s, "ln.gamma")?;
                let be = g.param(s, "ln.beta")?;
                g.layer_norm(x, ga, be)
            },
            true,
        );
        for training in [true, false] {
            let mut s = store_with(&[("x", &[3, 2, 3, 4])], 8);
            s.add_batch_norm("bn", 2).unwrap();
            s.set_value("bn.running_mean", Tensor::from_vec(vec![2], vec![0.1, -0.2]).unwrap()).unwrap();
            s.set_value("bn.running_var", Tensor::from_vec(vec![2], vec![0.5, 1.5]).unwrap()).unwrap();
            s.set_value("bn.gamma", Tensor::from_vec(vec![2], vec![1.3, 0.7]).unwrap()).unwrap();
            grad_check(
                &mut s,
                &|g, s| {
                    let x = g.param(s, "x")?;
                    g.batch_norm(s, x, "bn")
                },
                training,
            );
        }
    }

    #[test]
    fn batch_norm_running_statistics() {
        let mut s = ParamStore::<f64>::new();
        s.add_batch_norm("bn", 1).unwrap();
        let mut g = Graph::new(true);
        let x = g.constant(Tensor::from_vec(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        let y = g.batch_norm(&s, x, "bn").unwrap();
        let out = g.value(y).data();
        let m = out.iter().sum::<f64>() / 4.0;
        let v = out.iter().map(|u| (u - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-4);
        let updates = g.take_buffer_updates();
        s.apply_buffer_updates(updates).unwrap();
        // batch mean 3, biased var 3.5, unbiased 14/3
        assert!((s.value("bn.running_mean").unwrap().data()[0] - 0.3).abs() < 1e-12);
        let rv = 0.9 + 0.1 * 14.0 / 3.0;
        assert!((s.value("bn.running_var").unwrap().data()[0] - rv).abs() < 1e-12);
    }

    #[test]
    fn resampling_gradients() {
        let mut s = store_with(&[("x", &[1, 2, 4, 4])], 9);
        grad_check(
            &mut s,
            &|g, s| {
                let x = g.param(s, "x")?;
                let p = g.avg_pool(x, 2)?;
                let u = g.upsample_nearest(p, 3)?;
                let t = g.transpose_last2(u)?;
                let n = g.narrow(t, 2, 1, 4)?;
                g.concat(&[n, n], 1)
            },
            true,
        );
    }

    #[test]
    fn attention_gradients() {
        let mut s = store_with(&[("q", &[2, 3, 4]), ("k", &[2, 5, 4]), ("v", &[2, 5, 4])], 10);
        for heads in [1, 2] {
            grad_check(
                &mut s,
                &move |g, s| {
                    let q = g.param(s, "q")?;
                    let k = g.param(s, "k")?;
                    let v = g.param(s, "v")?;
                    g.attention(q, k, v, heads)
                },
                true,
            );
        }
    }

    #[test]
    fn haar_synthesis_gradients_and_inverse() {
        let mut s =
            store_with(&[("a", &[1, 2, 2, 3]), ("v", &[1, 2, 2, 3]), ("h", &[1, 2, 2, 3]), ("d", &[1, 2, 2, 3])], 11);
        grad_check(
            &mut s,
            &|g, s| {
                let b = [g.param(s, "a")?, g.param(s, "v")?, g.param(s, "h")?, g.param(s, "d")?];
                g.haar_synthesis(b)
            },
            true,
        );
        let mut g = Graph::<f64>::new(false);
        let vals = [5.0, -2.0, -1.0, 0.0];
        let b = vals.map(|v| g.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![v]).unwrap()));
        let out = g.haar_synthesis(b).unwrap();
        assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
