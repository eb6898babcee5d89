//! Natural-scene statistics: MSCN coefficients and generalised Gaussian
//! fits shared by NIQE and BRISQUE.

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use super::filter::{filter_same, gaussian_kernel, Plane};

/// Features per scale: GGD shape and variance, then shape, mean, left and
/// right variance of the AGGD fit to each of four neighbour products.
pub const FEATURES_PER_SCALE: usize = 18;
pub const NUM_FEATURES: usize = 2 * FEATURES_PER_SCALE;

const MSCN_WINDOW: usize = 7;
const MSCN_SIGMA: f64 = 7.0 / 6.0;
/// Stabiliser of the divisive normalisation, one 8-bit level.
const MSCN_C: f64 = 1.0 / 255.0;
/// Shape reported when a fit has no spread to measure.
const DEGENERATE_SHAPE: f64 = 2.0;

/// MSCN coefficients and the local standard deviation map.
pub(crate) fn mscn(p: &Plane) -> (Plane, Plane) {
    let k = gaussian_kernel(MSCN_WINDOW, MSCN_SIGMA);
    let mu = filter_same(p, &k);
    let sq = filter_same(&p.zip_map(p, |a, b| a * b), &k);
    let sigma = sq.zip_map(&mu, |s, m| (s - m * m).abs().sqrt());
    let mut out = Vec::with_capacity(p.data.len());
    for i in 0..p.data.len() {
        out.push((p.data[i] - mu.data[i]) / (sigma.data[i] + MSCN_C));
    }
    (Plane::new(p.h, p.w, out), sigma)
}

const SHAPE_MIN: f64 = 0.2;
const SHAPE_STEP: f64 = 0.001;
const SHAPE_COUNT: usize = 9800;

fn shape_grid() -> &'static [(f64, f64)] {
    static GRID: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    GRID.get_or_init(|| {
        (0..SHAPE_COUNT)
            .map(|i| {
                let a = SHAPE_MIN + i as f64 * SHAPE_STEP;
                // Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)), increasing in a.
                let r = (2.0 * ln_gamma(2.0 / a) - ln_gamma(1.0 / a) - ln_gamma(3.0 / a)).exp();
                (a, r)
            })
            .collect()
    })
}

/// Grid shape whose moment ratio is closest to `r`.
fn solve_shape(r: f64) -> f64 {
    let grid = shape_grid();
    let i = grid.partition_point(|&(_, g)| g < r);
    match (i.checked_sub(1).map(|j| grid[j]), grid.get(i)) {
        (Some(lo), Some(hi)) if (r - lo.1) <= (hi.1 - r) => lo.0,
        (_, Some(hi)) => hi.0,
        (Some(lo), None) => lo.0,
        (None, None) => DEGENERATE_SHAPE,
    }
}

/// Moment-matching fit of a zero-mean generalised Gaussian: `(shape, variance)`.
pub(crate) fn fit_ggd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let abs_mean = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if !(var > 1e-12) {
        return (DEGENERATE_SHAPE, var.max(0.0));
    }
    (solve_shape(abs_mean * abs_mean / var), var)
}

/// Asymmetric generalised Gaussian fit: `(shape, mean, left var, right var)`.
pub(crate) fn fit_aggd(x: &[f64]) -> (f64, f64, f64, f64) {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
    }
    let lvar = if ln > 0 { ls / ln as f64 } else { 0.0 };
    let rvar = if rn > 0 { rs / rn as f64 } else { 0.0 };
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let abs_mean = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if !(lvar > 1e-12 && rvar > 1e-12 && sq > 1e-12) {
        return (DEGENERATE_SHAPE, 0.0, lvar, rvar);
    }
    let (sl, sr) = (lvar.sqrt(), rvar.sqrt());
    let g = sl / sr;
    let rhat = abs_mean * abs_mean / sq;
    let big_r = rhat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let a = solve_shape(big_r);
    let scale = (ln_gamma(2.0 / a) - ln_gamma(1.0 / a)).exp() * (ln_gamma(1.0 / a) - ln_gamma(3.0 / a)).exp().sqrt();
    (a, (sr - sl) * scale, lvar, rvar)
}

/// Products of each coefficient with its right, lower, lower-right and
/// lower-left neighbour.
fn neighbour_products(m: &Plane) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for y in 0..m.h {
        for x in 0..m.w {
            let v = m.at(y, x);
            if x + 1 < m.w {
                out[0].push(v * m.at(y, x + 1));
            }
            if y + 1 < m.h {
                out[1].push(v * m.at(y + 1, x));
                if x + 1 < m.w {
                    out[2].push(v * m.at(y + 1, x + 1));
                }
                if x > 0 {
                    out[3].push(v * m.at(y + 1, x - 1));
                }
            }
        }
    }
    out
}

/// The 18 features of one block of MSCN coefficients.
pub(crate) fn scale_features(m: &Plane) -> [f64; FEATURES_PER_SCALE] {
    let mut f = [0.0; FEATURES_PER_SCALE];
    let (a, v) = fit_ggd(&m.data);
    f[0] = a;
    f[1] = v;
    for (i, prod) in neighbour_products(m).iter().enumerate() {
        let (a, mu, l, r) = if prod.is_empty() { (DEGENERATE_SHAPE, 0.0, 0.0, 0.0) } else { fit_aggd(prod) };
        f[2 + 4 * i..6 + 4 * i].copy_from_slice(&[a, mu, l, r]);
    }
    f
}

/// Sub-block of a plane.
pub(crate) fn block(p: &Plane, top: usize, left: usize, h: usize, w: usize) -> Plane {
    let mut data = Vec::with_capacity(h * w);
    for y in top..top + h {
        data.extend_from_slice(&p.data[y * p.w + left..y * p.w + left + w]);
    }
    Plane::new(h, w, data)
}
