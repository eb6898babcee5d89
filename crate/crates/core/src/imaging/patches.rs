use rand::Rng;

use super::ImageTensor;
use crate::error::{Error, Result};
use crate::rng;

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`), repeated as often as needed.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads an image by the given margins.
pub fn reflect_pad(img: &ImageTensor, top: usize, bottom: usize, left: usize, right: usize) -> ImageTensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (nh, nw) = (h + top + bottom, w + left + right);
    let mut data = Vec::with_capacity(nh * nw * c);
    for y in 0..nh {
        let sy = reflect_index(y as isize - top as isize, h);
        for x in 0..nw {
            let sx = reflect_index(x as isize - left as isize, w);
            let base = (sy * w + sx) * c;
            data.extend_from_slice(&img.data()[base..base + c]);
        }
    }
    ImageTensor::new(nh, nw, c, data).expect("padding preserves the value range")
}

fn pad_to(img: &ImageTensor, size: usize) -> ImageTensor {
    let dh = size.saturating_sub(img.height());
    let dw = size.saturating_sub(img.width());
    if dh == 0 && dw == 0 {
        return img.clone();
    }
    reflect_pad(img, dh / 2, dh - dh / 2, dw / 2, dw - dw / 2)
}

fn crop_origins(h: usize, w: usize, size: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = rng::stream(seed, "crop");
    (0..count).map(|_| (rng.gen_range(0..=h - size), rng.gen_range(0..=w - size))).collect()
}

fn check_args(size: usize, count: usize) -> Result<()> {
    if size < 8 {
        return Err(Error::Argument(format!("patch size must be >= 8, got {size}")));
    }
    if count == 0 {
        return Err(Error::Argument("patch count must be positive".into()));
    }
    Ok(())
}

/// `count` random `size`×`size` crops; undersized images are reflect-padded.
pub fn extract_patches(img: &ImageTensor, size: usize, count: usize, seed: u64) -> Result<Vec<ImageTensor>> {
    check_args(size, count)?;
    let padded = pad_to(img, size);
    crop_origins(padded.height(), padded.width(), size, count, seed)
        .into_iter()
        .map(|(y, x)| padded.crop(y, x, size, size))
        .collect()
}

/// Pixel-aligned crops of a low/high pair taken at identical coordinates.
pub fn extract_patch_pairs(
    low: &ImageTensor,
    high: &ImageTensor,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    check_args(size, count)?;
    if !low.same_shape(high) {
        return Err(Error::Shape(format!(
            "pair shapes differ: {}x{}x{} vs {}x{}x{}",
            low.height(),
            low.width(),
            low.channels(),
            high.height(),
            high.width(),
            high.channels()
        )));
    }
    let (pl, ph) = (pad_to(low, size), pad_to(high, size));
    crop_origins(pl.height(), pl.width(), size, count, seed)
        .into_iter()
        .map(|(y, x)| Ok((pl.crop(y, x, size, size)?, ph.crop(y, x, size, size)?)))
        .collect()
}
