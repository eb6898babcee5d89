//! Orthonormal separable 2D Haar transform.
//!
//! One analysis level filters along rows with `a = (x0 + x1)/√2`,
//! `d = (x0 - x1)/√2`, then along columns, giving
//!
//! * `A` approximation (approx / approx),
//! * `V` vertical detail (row approx, column detail),
//! * `H` horizontal detail (row detail, column approx),
//! * `D` diagonal detail (detail / detail).
//!
//! An odd-length line keeps its last sample as an approximation coefficient
//! with zero detail. That is symmetric extension of the tail with the
//! boundary pair rescaled by 1/√2, so every level stays an isometry and
//! reconstruction crops back to the recorded size.

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Channel-last coefficient plane; unlike [`ImageTensor`] values are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Band {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_image(img: &ImageTensor) -> Self {
        Self { height: img.height(), width: img.width(), channels: img.channels(), data: img.data().to_vec() }
    }

    /// Clamps into `[0, 1]` and validates as an image.
    pub fn to_image_clamped(&self) -> Result<ImageTensor> {
        ImageTensor::from_clamped(self.height, self.width, self.channels, self.data.clone())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        f64::from(self.data[(y * self.width + x) * self.channels + c])
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub v: Band,
    pub h: Band,
    pub d: Band,
}

impl DetailBands {
    pub fn map(&self, f: impl Fn(f32) -> f32 + Copy) -> Self {
        Self { v: self.v.map(f), h: self.h.map(f), d: self.d.map(f) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    /// Coarsest approximation `A_k`.
    pub approx: Band,
    /// Detail triples, finest level first.
    pub details: Vec<DetailBands>,
    /// `(height, width)` of the signal entering each level, finest first.
    pub input_dims: Vec<(usize, usize)>,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    /// Sum of squares over every coefficient.
    pub fn energy(&self) -> f64 {
        self.approx.energy() + self.details.iter().map(|d| d.v.energy() + d.h.energy() + d.d.energy()).sum::<f64>()
    }

    pub fn scale(&self, s: f32) -> Self {
        Self {
            approx: self.approx.map(|v| v * s),
            details: self.details.iter().map(|d| d.map(|v| v * s)).collect(),
            input_dims: self.input_dims.clone(),
        }
    }
}

fn analyze_level(src: &Band) -> (Band, DetailBands) {
    let (h, w, ch) = src.dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut a = Band::zeros(oh, ow, ch);
    let mut v = Band::zeros(oh, ow, ch);
    let mut hb = Band::zeros(oh, ow, ch);
    let mut d = Band::zeros(oh, ow, ch);
    for i in 0..oh {
        let r0 = 2 * i;
        let r1 = (r0 + 1 < h).then_some(r0 + 1);
        for j in 0..ow {
            let c0 = 2 * j;
            let c1 = (c0 + 1 < w).then_some(c0 + 1);
            for c in 0..ch {
                let row = |r: usize| -> (f64, f64) {
                    let x0 = src.at(r, c0, c);
                    match c1 {
                        Some(c1) => {
                            let x1 = src.at(r, c1, c);
                            ((x0 + x1) * INV_SQRT2, (x0 - x1) * INV_SQRT2)
                        }
                        None => (x0, 0.0),
                    }
                };
                let (la0, ld0) = row(r0);
                let (av, vv, hv, dv) = match r1 {
                    Some(r1) => {
                        let (la1, ld1) = row(r1);
                        (
                            (la0 + la1) * INV_SQRT2,
                            (la0 - la1) * INV_SQRT2,
                            (ld0 + ld1) * INV_SQRT2,
                            (ld0 - ld1) * INV_SQRT2,
                        )
                    }
                    None => (la0, 0.0, ld0, 0.0),
                };
                let idx = (i * ow + j) * ch + c;
                a.data[idx] = av as f32;
                v.data[idx] = vv as f32;
                hb.data[idx] = hv as f32;
                d.data[idx] = dv as f32;
            }
        }
    }
    (a, DetailBands { v, h: hb, d })
}

fn synthesize_level(a: &Band, det: &DetailBands, h: usize, w: usize) -> Band {
    let (oh, ow, ch) = a.dims();
    let mut out = Band::zeros(h, w, ch);
    for i in 0..oh {
        let r0 = 2 * i;
        let r1 = (r0 + 1 < h).then_some(r0 + 1);
        for j in 0..ow {
            let c0 = 2 * j;
            let c1 = (c0 + 1 < w).then_some(c0 + 1);
            for c in 0..ch {
                let (av, vv, hv, dv) = (a.at(i, j, c), det.v.at(i, j, c), det.h.at(i, j, c), det.d.at(i, j, c));
                let rows: [(usize, f64, f64); 2];
                let n_rows = match r1 {
                    Some(r1) => {
                        rows = [
                            (r0, (av + vv) * INV_SQRT2, (hv + dv) * INV_SQRT2),
                            (r1, (av - vv) * INV_SQRT2, (hv - dv) * INV_SQRT2),
                        ];
                        2
                    }
                    None => {
                        rows = [(r0, av, hv), (0, 0.0, 0.0)];
                        1
                    }
                };
                for &(r, la, ld) in &rows[..n_rows] {
                    match c1 {
                        Some(c1) => {
                            out.data[(r * w + c0) * ch + c] = ((la + ld) * INV_SQRT2) as f32;
                            out.data[(r * w + c1) * ch + c] = ((la - ld) * INV_SQRT2) as f32;
                        }
                        None => out.data[(r * w + c0) * ch + c] = la as f32,
                    }
                }
            }
        }
    }
    out
}

/// `k`-level analysis of a band (the approximation is re-analysed each level).
pub fn dwt2_band(src: &Band, k: usize) -> Result<WaveletPyramid> {
    if !(1..=3).contains(&k) {
        return Err(Error::Argument(format!("wavelet levels must be in 1..=3, got {k}")));
    }
    let min = 1usize << k;
    if src.height < min || src.width < min {
        return Err(Error::Argument(format!("{}x{} input is smaller than 2^{k}", src.height, src.width)));
    }
    let mut approx = src.clone();
    let mut details = Vec::with_capacity(k);
    let mut input_dims = Vec::with_capacity(k);
    for _ in 0..k {
        input_dims.push((approx.height, approx.width));
        let (a, d) = analyze_level(&approx);
        details.push(d);
        approx = a;
    }
    Ok(WaveletPyramid { approx, details, input_dims })
}

/// `k`-level orthonormal Haar analysis of an image, per channel.
pub fn dwt2(img: &ImageTensor, k: usize) -> Result<WaveletPyramid> {
    dwt2_band(&Band::from_image(img), k)
}

/// Exact inverse of [`dwt2`]; the result is not clamped.
pub fn idwt2(pyr: &WaveletPyramid) -> Result<Band> {
    if pyr.details.is_empty() || pyr.details.len() != pyr.input_dims.len() {
        return Err(Error::Shape(format!(
            "pyramid has {} detail levels and {} recorded sizes",
            pyr.details.len(),
            pyr.input_dims.len()
        )));
    }
    let mut cur = pyr.approx.clone();
    for (det, &(h, w)) in pyr.details.iter().zip(&pyr.input_dims).rev() {
        let want = (h.div_ceil(2), w.div_ceil(2), cur.channels);
        for (name, b) in [("A", &cur), ("V", &det.v), ("H", &det.h), ("D", &det.d)] {
            if b.dims() != want {
                return Err(Error::Shape(format!(
                    "band {name} is {:?}, expected {want:?} for a {h}x{w} level",
                    b.dims()
                )));
            }
        }
        cur = synthesize_level(&cur, det, h, w);
    }
    Ok(cur)
}
