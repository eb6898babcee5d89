//! Full-reference metrics on unit-range images (peak value 1).

use super::filter::{filter_valid, gaussian_kernel, Plane};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Returned by [`psnr`] when the mean squared error is below `1e-10`.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Per-scale weights of five-scale MS-SSIM, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn check_shapes(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )))
    }
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum();
    Ok(s / a.data().len() as f64)
}

pub fn mae(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs()).sum();
    Ok(s / a.data().len() as f64)
}

/// `10 log10(1 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let m = mse(a, b)?;
    if m < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean SSIM map value and mean contrast-structure value of one plane pair.
fn ssim_plane(x: &Plane, y: &Plane, k: &[f64]) -> (f64, f64) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mx = filter_valid(x, k);
    let my = filter_valid(y, k);
    let xx = filter_valid(&x.zip_map(x, |a, b| a * b), k);
    let yy = filter_valid(&y.zip_map(y, |a, b| a * b), k);
    let xy = filter_valid(&x.zip_map(y, |a, b| a * b), k);
    let n = mx.data.len() as f64;
    let (mut s, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = xx.data[i] - ux * ux;
        let vy = yy.data[i] - uy * uy;
        let cov = xy.data[i] - ux * uy;
        let l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        s += l * c;
        cs += c;
    }
    (s / n, cs / n)
}

fn planes(img: &ImageTensor) -> Vec<Plane> {
    (0..img.channels()).map(|c| Plane::channel(img, c)).collect()
}

/// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), averaged over
/// channels. Constant windows count as perfect contrast and structure.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (pa, pb) = (planes(a), planes(b));
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, &k).0).sum();
    Ok(total / pa.len() as f64)
}

/// Number of dyadic scales MS-SSIM uses for an `h x w` image: up to five,
/// while the coarsest scale still fits the SSIM window.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&m| (h >> (m - 1)) >= SSIM_WINDOW && (w >> (m - 1)) >= SSIM_WINDOW)
        .unwrap_or(0)
}

/// Multi-scale SSIM with 2x2 average downsampling. Images under 176 pixels
/// on a side use fewer scales with the leading weights renormalised.
/// Negative per-scale terms are clamped to 0 before exponentiation.
pub fn ms_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a, b)?;
    let m = ms_ssim_scales(a.height(), a.width());
    if m == 0 {
        return Err(Error::Argument(format!(
            "MS-SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..m].iter().sum();
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (pa, pb) = (planes(a), planes(b));
    let mut total = 0.0;
    for (mut x, mut y) in pa.into_iter().zip(pb) {
        let mut score = 1.0;
        for (j, w) in MS_SSIM_WEIGHTS[..m].iter().enumerate() {
            let (s, cs) = ssim_plane(&x, &y, &k);
            let term = if j + 1 == m { s } else { cs };
            score *= term.max(0.0).powf(w / wsum);
            if j + 1 < m {
                x = x.halve();
                y = y.halve();
            }
        }
        total += score;
    }
    Ok(total / a.channels() as f64)
}
