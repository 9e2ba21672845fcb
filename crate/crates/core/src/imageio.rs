//! PNG (8/16-bit) and PGM/PPM reading and writing for `[0, 1]` tensors.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn check_channels(t: &Tensor, want: usize) -> Result<(u32, u32)> {
    let (h, w, c) = t.hwc()?;
    if c != want {
        return Err(Error::shape("image write", format!("expected {want} channels, got {c}")));
    }
    Ok((w as u32, h as u32))
}

/// Reads an image as `H × W × 3` RGB in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_rgb16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Reads an image as `H × W × 1` in `[0, 1]`. Colour images are reduced by
/// summing their channels, which recovers the sampled value from a mosaic
/// stored with zeros in the unsampled channels.
pub fn read_mosaic(path: &Path) -> Result<Tensor> {
    let dynimg = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data: Vec<f64> = if dynimg.color().channel_count() >= 3 {
        dynimg
            .into_rgb16()
            .into_raw()
            .chunks_exact(3)
            .map(|p| ((p[0] as f64 + p[1] as f64 + p[2] as f64) / 65535.0).min(1.0))
            .collect()
    } else {
        dynimg.into_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    };
    Tensor::new(vec![h, w, 1], data)
}

/// Writes a 16-bit RGB image. The format follows the extension (`.png`,
/// `.ppm`).
pub fn write_rgb16(path: &Path, t: &Tensor) -> Result<()> {
    let (w, h) = check_channels(t, 3)?;
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, t.data().iter().map(|&v| quantize(v)).collect()).expect("buffer size");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Writes a 16-bit single-channel image (`.png`, `.pgm`).
pub fn write_gray16(path: &Path, t: &Tensor) -> Result<()> {
    let (w, h) = check_channels(t, 1)?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w, h, t.data().iter().map(|&v| quantize(v)).collect()).expect("buffer size");
    buf.save(path).map_err(|e| image_err(path, e))
}
