//! Planar f64 images and the separable filters the metrics share.

use crate::imaging::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    pub fn channel(img: &ImageTensor, c: usize) -> Self {
        Self::new(img.height(), img.width(), img.channel(c).into_iter().map(f64::from).collect())
    }

    pub fn luma(img: &ImageTensor) -> Self {
        Self::new(img.height(), img.width(), img.luma().into_iter().map(f64::from).collect())
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane::new(self.h, self.w, self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect())
    }

    /// 2x2 block means; a trailing odd row or column is dropped.
    pub fn halve(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * y, 2 * x)
                    + self.at(2 * y, 2 * x + 1)
                    + self.at(2 * y + 1, 2 * x)
                    + self.at(2 * y + 1, 2 * x + 1);
                out.push(s / 4.0);
            }
        }
        Plane::new(h, w, out)
    }
}

/// Normalised 1D Gaussian of odd length `size`.
pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable correlation keeping only fully covered positions.
pub(crate) fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let (oh, ow) = (p.h + 1 - n, p.w + 1 - n);
    let mut rows = vec![0.0; p.h * ow];
    for y in 0..p.h {
        let src = &p.data[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + x]).sum();
        }
    }
    Plane::new(oh, ow, out)
}

/// Separable correlation with replicated borders; output matches input size.
pub(crate) fn filter_same(p: &Plane, k: &[f64]) -> Plane {
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            rows[y * p.w + x] =
                k.iter().enumerate().map(|(i, a)| a * p.at(y, clamp(x as isize + i as isize - r, p.w))).sum();
        }
    }
    let mut out = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            out[y * p.w + x] =
                k.iter().enumerate().map(|(i, a)| a * rows[clamp(y as isize + i as isize - r, p.h) * p.w + x]).sum();
        }
    }
    Plane::new(p.h, p.w, out)
}
