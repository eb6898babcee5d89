//! Procedural street-like scenes used as a stand-in for real photographs in
//! tests, examples and the toy training recipe.
//!
//! A scene is a sky/ground gradient, a row of textured block "buildings" with
//! window grids, a few soft disks and multi-octave value noise. The mix gives
//! sharp edges, smooth regions and texture, which is what the wavelet and
//! quality-metric code needs to be exercised meaningfully.

use rand::Rng;

use super::ImageTensor;
use crate::rng;

struct ValueNoise {
    cells: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let n = (cells + 1) * (cells + 1);
        Self { cells, lattice: (0..n).map(|_| rng.gen::<f32>() - 0.5).collect() }
    }

    fn at(&self, u: f32, v: f32) -> f32 {
        let fx = u * self.cells as f32;
        let fy = v * self.cells as f32;
        let x0 = (fx.floor() as usize).min(self.cells - 1);
        let y0 = (fy.floor() as usize).min(self.cells - 1);
        let tx = fx - x0 as f32;
        let ty = fy - y0 as f32;
        let s = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(tx), s(ty));
        let stride = self.cells + 1;
        let l = |x: usize, y: usize| self.lattice[y * stride + x];
        let top = l(x0, y0) * (1.0 - tx) + l(x0 + 1, y0) * tx;
        let bot = l(x0, y0 + 1) * (1.0 - tx) + l(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn random_color(rng: &mut impl Rng, lo: f32, hi: f32) -> [f32; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

/// Generates a deterministic `height`×`width` scene with 1 or 3 channels.
pub fn generate(height: usize, width: usize, channels: usize, seed: u64) -> ImageTensor {
    assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
    let mut rng = rng::stream(seed, "scene");
    let horizon = rng.gen_range(0.35f32..0.6);
    let sky_top = random_color(&mut rng, 0.45, 0.8);
    let sky_low = random_color(&mut rng, 0.6, 0.95);
    let ground = random_color(&mut rng, 0.2, 0.45);
    let octaves: Vec<ValueNoise> = [3usize, 7, 17].iter().map(|&c| ValueNoise::new(c, &mut rng)).collect();
    let amps = [0.12f32, 0.07, 0.05];

    let n_blocks = rng.gen_range(3..7);
    let blocks: Vec<(f32, f32, f32, [f32; 3], usize)> = (0..n_blocks)
        .map(|_| {
            let x0 = rng.gen_range(0.0f32..0.85);
            let w = rng.gen_range(0.08f32..0.3);
            let top = rng.gen_range(0.15f32..horizon + 0.1);
            let grid = rng.gen_range(3usize..7);
            (x0, (x0 + w).min(1.0), top, random_color(&mut rng, 0.15, 0.6), grid)
        })
        .collect();
    let disks: Vec<(f32, f32, f32, [f32; 3])> = (0..rng.gen_range(1..4))
        .map(|_| {
            (
                rng.gen_range(0.1f32..0.9),
                rng.gen_range(0.1f32..0.9),
                rng.gen_range(0.03f32..0.12),
                random_color(&mut rng, 0.5, 0.95),
            )
        })
        .collect();

    let mut data = vec![0.0f32; height * width * channels];
    for y in 0..height {
        let v = (y as f32 + 0.5) / height as f32;
        for x in 0..width {
            let u = (x as f32 + 0.5) / width as f32;
            let mut rgb = if v < horizon {
                let t = v / horizon;
                [0, 1, 2].map(|c| sky_top[c] * (1.0 - t) + sky_low[c] * t)
            } else {
                let t = (v - horizon) / (1.0 - horizon);
                ground.map(|g| g * (1.0 - 0.4 * t) + 0.05)
            };
            for &(x0, x1, top, color, grid) in &blocks {
                if u >= x0 && u < x1 && v >= top {
                    rgb = color;
                    let gu = ((u - x0) / (x1 - x0) * grid as f32).fract();
                    let gv = ((v - top) / (1.0 - top) * (grid * 2) as f32).fract();
                    if (0.25..0.7).contains(&gu) && (0.3..0.7).contains(&gv) {
                        rgb = rgb.map(|c| (c + 0.3).min(0.95));
                    }
                }
            }
            for &(cx, cy, r, color) in &disks {
                let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                let w = ((r - d) / (0.25 * r)).clamp(0.0, 1.0);
                for c in 0..3 {
                    rgb[c] = rgb[c] * (1.0 - w) + color[c] * w;
                }
            }
            let tex: f32 = octaves.iter().zip(amps).map(|(o, a)| a * o.at(u, v)).sum();
            let px = (y * width + x) * channels;
            if channels == 1 {
                let l = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                data[px] = (l + tex).clamp(0.02, 0.98);
            } else {
                for c in 0..3 {
                    data[px + c] = (rgb[c] + tex).clamp(0.02, 0.98);
                }
            }
        }
    }
    ImageTensor::new(height, width, channels, data).expect("scene values are clamped")
}
