use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use super::ImageTensor;
use crate::error::{Error, Result};

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::Format(format!("{}: only .png and .ppm are supported", path.display()))),
    }
}

/// Reads an 8-bit PNG (gray or RGB) or binary PPM, scaling samples by 1/255.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes)
        .ok()
        .filter(|f| matches!(f, ImageFormat::Png | ImageFormat::Pnm))
        .ok_or_else(|| Error::Format(format!("{}: not a PNG or PPM file", path.display())))?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma8().into_raw())
        }
        other => (3, other.to_rgb8().into_raw()),
    };
    let data = raw.iter().map(|&b| f32::from(b) / 255.0).collect();
    ImageTensor::new(h, w, channels, data)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image as PNG or binary PPM depending on the extension.
///
/// PPM output is always RGB; grayscale images are replicated across channels.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    let dynimg = match (img.channels(), format) {
        (1, ImageFormat::Png) => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).ok_or_else(|| Error::Internal("gray buffer".into()))?,
        ),
        (1, _) => {
            let rgb = bytes.iter().flat_map(|&b| [b, b, b]).collect();
            DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, rgb).ok_or_else(|| Error::Internal("rgb buffer".into()))?,
            )
        }
        _ => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).ok_or_else(|| Error::Internal("rgb buffer".into()))?,
        ),
    };
    let mut out = std::io::Cursor::new(Vec::new());
    match format {
        ImageFormat::Pnm => dynimg
            .write_with_encoder(
                image::codecs::pnm::PnmEncoder::new(&mut out)
                    .with_subtype(image::codecs::pnm::PnmSubtype::Pixmap(image::codecs::pnm::SampleEncoding::Binary)),
            )
            .map_err(|e| Error::Format(e.to_string()))?,
        _ => dynimg.write_to(&mut out, format).map_err(|e| Error::Format(e.to_string()))?,
    }
    std::fs::write(path, out.into_inner()).map_err(|e| Error::io(path, e))
}

/// Sorted list of `.png` / `.ppm` files directly inside `dir`.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_file() && format_for(&p).is_ok() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}
