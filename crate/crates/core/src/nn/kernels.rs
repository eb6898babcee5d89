//! Numeric kernels behind the differentiable ops.
//!
//! Each kernel parallelises over independent output planes or rows only;
//! every output value is produced by exactly one task with a fixed summation
//! order, so results do not depend on the number of threads.

use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// 2D cross-correlation with zero "same" padding (`dilation * (k - 1) / 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, dilation: 1, groups: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    b: usize,
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    ph: usize,
    pw: usize,
    icpg: usize,
    ocpg: usize,
    s: usize,
    d: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (&[b, ic, h, wd], &[oc, icpg, kh, kw]) = (x, w) else {
            return Err(Error::Shape(format!("conv2d expects 4-d input and weight, got {x:?} and {w:?}")));
        };
        let Conv2dSpec { stride: s, dilation: d, groups: g } = spec;
        if s == 0 || d == 0 || g == 0 {
            return Err(Error::Argument("stride, dilation and groups must be >= 1".into()));
        }
        if ic % g != 0 || oc % g != 0 || icpg != ic / g {
            return Err(Error::Shape(format!(
                "conv2d: input channels {ic}, output channels {oc}, groups {g} and weight {w:?} disagree"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("conv2d needs odd kernels, got {kh}x{kw}")));
        }
        let (ph, pw) = (d * (kh - 1) / 2, d * (kw - 1) / 2);
        let oh = (h + 2 * ph - d * (kh - 1) - 1) / s + 1;
        let ow = (wd + 2 * pw - d * (kw - 1) - 1) / s + 1;
        Ok(Self { b, ic, h, w: wd, oc, kh, kw, oh, ow, ph, pw, icpg, ocpg: oc / g, s, d })
    }

    /// Output columns `lo..hi` whose input column for tap `kx` is in range.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize, isize) {
        let off = (kx * self.d) as isize - self.pw as isize;
        let s = self.s as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let lo = lo.min(self.ow as isize);
        let hi = ((self.w as isize - 1 - off).div_euclid(s) + 1).clamp(0, self.ow as isize);
        (lo as usize, hi.max(lo) as usize, off)
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.s + ky * self.d) as isize - self.ph as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

pub fn conv2d_output_dims(x: &[usize], w: &[usize], spec: Conv2dSpec) -> Result<Vec<usize>> {
    let g = ConvGeom::new(x, w, spec)?;
    Ok(vec![g.b, g.oc, g.oh, g.ow])
}

pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    if let Some(b) = bias {
        if b.numel() != g.oc {
            return Err(Error::Shape(format!("conv2d bias has {} values for {} channels", b.numel(), g.oc)));
        }
    }
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.b * g.oc * plane];
    let (xd, wd) = (x.data(), w.data());
    let bd = bias.map(|b| b.data());
    if g.icpg == g.ic {
        let kk = g.ic * g.kh * g.kw;
        par::for_each_chunk_mut(&mut out, g.oc * plane, |bi, dst| {
            let col = im2col(&g, &xd[bi * g.ic * g.h * g.w..][..g.ic * g.h * g.w]);
            if let Some(bd) = bd {
                for (row, &bv) in dst.chunks_mut(plane).zip(bd) {
                    row.fill(bv);
                }
            }
            T::gemm(g.oc, kk, plane, (wd, kk, 1), (&col, plane, 1), T::one(), (dst, plane, 1));
        });
        return Tensor::from_vec(vec![g.b, g.oc, g.oh, g.ow], out);
    }
    par::for_each_chunk_mut(&mut out, plane, |bo, dst| {
        let (bi, oc) = (bo / g.oc, bo % g.oc);
        let grp = oc / g.ocpg;
        if let Some(bd) = bd {
            dst.fill(bd[oc]);
        }
        for icl in 0..g.icpg {
            let ic = grp * g.icpg + icl;
            let src = &xd[(bi * g.ic + ic) * g.h * g.w..][..g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wd[((oc * g.icpg + icl) * g.kh + ky) * g.kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi, off) = g.col_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..g.oh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        let row_out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                        if g.s == 1 {
                            let start = (lo as isize + off) as usize;
                            for (o, &i) in row_out[lo..hi].iter_mut().zip(&row_in[start..]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in lo..hi {
                                row_out[ox] += wv * row_in[(ox as isize * g.s as isize + off) as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(vec![g.b, g.oc, g.oh, g.ow], out)
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: Conv2dSpec,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let g = ConvGeom::new(x.shape(), w.shape(), spec)?;
    if dy.shape() != [g.b, g.oc, g.oh, g.ow] {
        return Err(Error::Shape(format!("conv2d gradient {:?} does not match output", dy.shape())));
    }
    if g.icpg == g.ic {
        return conv2d_backward_gemm(&g, x, w, dy, need);
    }
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let plane = g.oh * g.ow;

    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); x.numel()];
        par::for_each_chunk_mut(&mut dx, g.h * g.w, |bic, dst| {
            let (bi, ic) = (bic / g.ic, bic % g.ic);
            let grp = ic / g.icpg;
            let icl = ic % g.icpg;
            for ocl in 0..g.ocpg {
                let oc = grp * g.ocpg + ocl;
                let gsrc = &gd[(bi * g.oc + oc) * plane..][..plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wd[((oc * g.icpg + icl) * g.kh + ky) * g.kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi, off) = g.col_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let grow = &gsrc[oy * g.ow..(oy + 1) * g.ow];
                            let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                            if g.s == 1 {
                                let start = (lo as isize + off) as usize;
                                for (d, &gv) in drow[start..].iter_mut().zip(&grow[lo..hi]) {
                                    *d += wv * gv;
                                }
                            } else {
                                for ox in lo..hi {
                                    drow[(ox as isize * g.s as isize + off) as usize] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        Tensor::from_vec(x.shape().to_vec(), dx)
    });

    let dw = need.1.then(|| {
        let per_oc = g.icpg * g.kh * g.kw;
        let mut dw = vec![T::zero(); w.numel()];
        par::for_each_chunk_mut(&mut dw, per_oc, |oc, dst| {
            let grp = oc / g.ocpg;
            for icl in 0..g.icpg {
                let ic = grp * g.icpg + icl;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let (lo, hi, off) = g.col_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for bi in 0..g.b {
                            let src = &xd[(bi * g.ic + ic) * g.h * g.w..][..g.h * g.w];
                            let gsrc = &gd[(bi * g.oc + oc) * plane..][..plane];
                            for oy in 0..g.oh {
                                let Some(iy) = g.in_row(oy, ky) else { continue };
                                let row_in = &src[iy * g.w..(iy + 1) * g.w];
                                let grow = &gsrc[oy * g.ow..(oy + 1) * g.ow];
                                if g.s == 1 {
                                    let start = (lo as isize + off) as usize;
                                    for (&gv, &i) in grow[lo..hi].iter().zip(&row_in[start..]) {
                                        acc += gv * i;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        acc += grow[ox] * row_in[(ox as isize * g.s as isize + off) as usize];
                                    }
                                }
                            }
                        }
                        dst[(icl * g.kh + ky) * g.kw + kx] = acc;
                    }
                }
            }
        });
        Tensor::from_vec(w.shape().to_vec(), dw)
    });

    let db = need.2.then(|| conv_bias_grad(&g, gd));

    Ok(ConvGrads { dx: dx.transpose()?, dw: dw.transpose()?, db: db.transpose()? })
}

/// Unfolds one `(ic, h, w)` image into `(ic * kh * kw, oh * ow)` columns.
fn im2col<T: Real>(g: &ConvGeom, src: &[T]) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut col = vec![T::zero(); g.ic * g.kh * g.kw * plane];
    for ic in 0..g.ic {
        let img = &src[ic * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((ic * g.kh + ky) * g.kw + kx) * plane..][..plane];
                let (lo, hi, off) = g.col_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    let row_in = &img[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        dst[ox] = row_in[(ox as isize * g.s as isize + off) as usize];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im<T: Real>(g: &ConvGeom, col: &[T], dst: &mut [T]) {
    let plane = g.oh * g.ow;
    for ic in 0..g.ic {
        let img = &mut dst[ic * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[((ic * g.kh + ky) * g.kw + kx) * plane..][..plane];
                let (lo, hi, off) = g.col_range(kx);
                if lo >= hi {
                    continue;
                }
                for oy in 0..g.oh {
                    let Some(iy) = g.in_row(oy, ky) else { continue };
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    let row_out = &mut img[iy * g.w..(iy + 1) * g.w];
                    for ox in lo..hi {
                        row_out[(ox as isize * g.s as isize + off) as usize] += src[ox];
                    }
                }
            }
        }
    }
}

/// Ungrouped convolution gradients through matrix products. Per-item weight
/// gradients are summed in batch order.
fn conv2d_backward_gemm<T: Real>(
    g: &ConvGeom,
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let plane = g.oh * g.ow;
    let kk = g.ic * g.kh * g.kw;
    let item = g.ic * g.h * g.w;

    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); x.numel()];
        par::for_each_chunk_mut(&mut dx, item, |bi, dst| {
            let mut dcol = vec![T::zero(); kk * plane];
            let gy = &gd[bi * g.oc * plane..][..g.oc * plane];
            T::gemm(kk, g.oc, plane, (wd, 1, kk), (gy, plane, 1), T::zero(), (&mut dcol, plane, 1));
            col2im(g, &dcol, dst);
        });
        Tensor::from_vec(x.shape().to_vec(), dx)
    });

    let dw = need.1.then(|| {
        let partials = par::map_range(g.b, |bi| {
            let col = im2col(g, &xd[bi * item..][..item]);
            let gy = &gd[bi * g.oc * plane..][..g.oc * plane];
            let mut part = vec![T::zero(); g.oc * kk];
            T::gemm(g.oc, plane, kk, (gy, plane, 1), (&col, 1, plane), T::zero(), (&mut part, kk, 1));
            part
        });
        let mut dw = vec![T::zero(); w.numel()];
        for part in partials {
            for (d, p) in dw.iter_mut().zip(part) {
                *d += p;
            }
        }
        Tensor::from_vec(w.shape().to_vec(), dw)
    });

    let db = need.2.then(|| conv_bias_grad(g, gd));

    Ok(ConvGrads { dx: dx.transpose()?, dw: dw.transpose()?, db: db.transpose()? })
}

fn conv_bias_grad<T: Real>(g: &ConvGeom, gd: &[T]) -> Result<Tensor<T>> {
    let plane = g.oh * g.ow;
    let mut db = vec![T::zero(); g.oc];
    for bi in 0..g.b {
        for (oc, acc) in db.iter_mut().enumerate() {
            for &v in &gd[(bi * g.oc + oc) * plane..][..plane] {
                *acc += v;
            }
        }
    }
    Tensor::from_vec(vec![g.oc], db)
}

/// `y[m, :] = x[m, :] · W + b` over the last axis; `W` is `(in, out)`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (k, n) = linear_dims(x, w)?;
    let m = x.numel() / k;
    if let Some(b) = bias {
        if b.numel() != n {
            return Err(Error::Shape(format!("linear bias has {} values for {n} outputs", b.numel())));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let bd = bias.map(|b| b.data());
    let mut out = vec![T::zero(); m * n];
    par::for_each_chunk_mut(&mut out, n, |row, dst| {
        if let Some(bd) = bd {
            dst.copy_from_slice(bd);
        }
        for (kk, &xv) in xd[row * k..(row + 1) * k].iter().enumerate() {
            for (o, &wv) in dst.iter_mut().zip(&wd[kk * n..(kk + 1) * n]) {
                *o += xv * wv;
            }
        }
    });
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = n;
    Tensor::from_vec(shape, out)
}

fn linear_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    let k = *x.shape().last().ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
    match *w.shape() {
        [wk, n] if wk == k => Ok((k, n)),
        _ => Err(Error::Shape(format!("linear weight {:?} does not accept inputs {:?}", w.shape(), x.shape()))),
    }
}

/// `(dx, dw, db)`, each present only if requested.
pub type LinearGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need: (bool, bool, bool),
) -> Result<LinearGrads<T>> {
    let (k, n) = linear_dims(x, w)?;
    let m = x.numel() / k;
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); m * k];
        par::for_each_chunk_mut(&mut dx, k, |row, dst| {
            let g = &gd[row * n..(row + 1) * n];
            for (kk, d) in dst.iter_mut().enumerate() {
                *d = g.iter().zip(&wd[kk * n..(kk + 1) * n]).map(|(&a, &b)| a * b).sum();
            }
        });
        Tensor::from_vec(x.shape().to_vec(), dx)
    });
    let dw = need.1.then(|| {
        let mut dw = vec![T::zero(); k * n];
        par::for_each_chunk_mut(&mut dw, n, |kk, dst| {
            for row in 0..m {
                let xv = xd[row * k + kk];
                for (d, &g) in dst.iter_mut().zip(&gd[row * n..(row + 1) * n]) {
                    *d += xv * g;
                }
            }
        });
        Tensor::from_vec(vec![k, n], dw)
    });
    let db = need.2.then(|| {
        let mut db = vec![T::zero(); n];
        for row in 0..m {
            for (d, &g) in db.iter_mut().zip(&gd[row * n..(row + 1) * n]) {
                *d += g;
            }
        }
        Tensor::from_vec(vec![n], db)
    });
    Ok((dx.transpose()?, dw.transpose()?, db.transpose()?))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnGeom {
    pub b: usize,
    pub nq: usize,
    pub nk: usize,
    pub d: usize,
    pub heads: usize,
}

impl AttnGeom {
    pub fn new<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<Self> {
        let (&[b, nq, d], &[bk, nk, dk], &[bv, nv, dv]) = (q.shape(), k.shape(), v.shape()) else {
            return Err(Error::Shape("attention expects (batch, tokens, dim) tensors".into()));
        };
        if d == 0 {
            return Err(Error::Argument("attention key dimension is zero".into()));
        }
        if bk != b || bv != b || dk != d || dv != d || nv != nk {
            return Err(Error::Shape(format!(
                "attention shapes disagree: q {:?}, k {:?}, v {:?}",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("dim {d} not divisible into {heads} heads")));
        }
        Ok(Self { b, nq, nk, d, heads })
    }

    fn dh(&self) -> usize {
        self.d / self.heads
    }
}

/// Multi-head scaled dot-product attention. Returns the output and the
/// softmax probabilities laid out `(batch, head, nq, nk)`.
pub(crate) fn attention_forward<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, g: AttnGeom) -> (Vec<T>, Vec<T>) {
    let dh = g.dh();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let per_head = par::map_range(g.b * g.heads, |bh| {
        let (bi, h) = (bh / g.heads, bh % g.heads);
        let mut probs = vec![T::zero(); g.nq * g.nk];
        let mut out = vec![T::zero(); g.nq * dh];
        for i in 0..g.nq {
            let qi = &qd[(bi * g.nq + i) * g.d + h * dh..][..dh];
            let row = &mut probs[i * g.nk..(i + 1) * g.nk];
            let mut max = T::neg_infinity();
            for (j, p) in row.iter_mut().enumerate() {
                let kj = &kd[(bi * g.nk + j) * g.d + h * dh..][..dh];
                let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                *p = s;
                max = max.max(s);
            }
            let mut total = T::zero();
            for p in row.iter_mut() {
                *p = (*p - max).exp();
                total += *p;
            }
            for p in row.iter_mut() {
                *p = *p / total;
            }
            let oi = &mut out[i * dh..(i + 1) * dh];
            for (j, &p) in row.iter().enumerate() {
                let vj = &vd[(bi * g.nk + j) * g.d + h * dh..][..dh];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += p * vv;
                }
            }
        }
        (out, probs)
    });
    let mut out = vec![T::zero(); g.b * g.nq * g.d];
    let mut probs = Vec::with_capacity(g.b * g.heads * g.nq * g.nk);
    for (bh, (o, p)) in per_head.into_iter().enumerate() {
        let (bi, h) = (bh / g.heads, bh % g.heads);
        for i in 0..g.nq {
            out[(bi * g.nq + i) * g.d + h * dh..][..dh].copy_from_slice(&o[i * dh..(i + 1) * dh]);
        }
        probs.extend(p);
    }
    (out, probs)
}

pub(crate) fn attention_backward<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    dout: &[T],
    g: AttnGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = g.dh();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let per_head = par::map_range(g.b * g.heads, |bh| {
        let (bi, h) = (bh / g.heads, bh % g.heads);
        let p = &probs[bh * g.nq * g.nk..][..g.nq * g.nk];
        let mut dq = vec![T::zero(); g.nq * dh];
        let mut dk = vec![T::zero(); g.nk * dh];
        let mut dv = vec![T::zero(); g.nk * dh];
        let mut ds = vec![T::zero(); g.nk];
        for i in 0..g.nq {
            let doi = &dout[(bi * g.nq + i) * g.d + h * dh..][..dh];
            let prow = &p[i * g.nk..(i + 1) * g.nk];
            let mut dot = T::zero();
            for j in 0..g.nk {
                let vj = &vd[(bi * g.nk + j) * g.d + h * dh..][..dh];
                let dp = doi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                ds[j] = dp;
                dot += dp * prow[j];
                for (dvv, &o) in dv[j * dh..(j + 1) * dh].iter_mut().zip(doi) {
                    *dvv += prow[j] * o;
                }
            }
            let qi = &qd[(bi * g.nq + i) * g.d + h * dh..][..dh];
            for j in 0..g.nk {
                let s = prow[j] * (ds[j] - dot) * scale;
                if s == T::zero() {
                    continue;
                }
                let kj = &kd[(bi * g.nk + j) * g.d + h * dh..][..dh];
                for (dqq, &kv) in dq[i * dh..(i + 1) * dh].iter_mut().zip(kj) {
                    *dqq += s * kv;
                }
                for (dkk, &qv) in dk[j * dh..(j + 1) * dh].iter_mut().zip(qi) {
                    *dkk += s * qv;
                }
            }
        }
        (dq, dk, dv)
    });
    let mut dq = vec![T::zero(); q.numel()];
    let mut dk = vec![T::zero(); k.numel()];
    let mut dv = vec![T::zero(); v.numel()];
    for (bh, (hq, hk, hv)) in per_head.into_iter().enumerate() {
        let (bi, h) = (bh / g.heads, bh % g.heads);
        for i in 0..g.nq {
            dq[(bi * g.nq + i) * g.d + h * dh..][..dh].copy_from_slice(&hq[i * dh..(i + 1) * dh]);
        }
        for j in 0..g.nk {
            dk[(bi * g.nk + j) * g.d + h * dh..][..dh].copy_from_slice(&hk[j * dh..(j + 1) * dh]);
            dv[(bi * g.nk + j) * g.d + h * dh..][..dh].copy_from_slice(&hv[j * dh..(j + 1) * dh]);
        }
    }
    (dq, dk, dv)
}

/// `softmax(q kᵀ / √d) v` for plain matrices `q: (nq, d)`, `k, v: (nk, d)`.
pub fn attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let lift = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match *t.shape() {
            [n, d] => t.clone().reshape(&[1, n, d]),
            _ => Err(Error::Shape(format!("attention expects matrices, got {:?}", t.shape()))),
        }
    };
    let (q3, k3, v3) = (lift(q)?, lift(k)?, lift(v)?);
    let g = AttnGeom::new(&q3, &k3, &v3, 1)?;
    let (out, _) = attention_forward(&q3, &k3, &v3, g);
    Tensor::from_vec(vec![g.nq, g.d], out)
}
