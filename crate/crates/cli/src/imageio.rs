//! PNG import and export. Pixels stay in double precision until export,
//! where they are rounded and clamped to 8 bits.

use std::path::Path;

use freqblend::{Scalar, Tensor};
use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{CliError, CliResult};

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Reads any PNG as an RGB tensor with values in `[0, 255]`.
pub fn read_rgb(path: &Path) -> CliResult<Tensor<f64>> {
    let img = ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|e| CliError::io(path, e))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(3, h, w, |c, i, j| {
        img.get_pixel(j as u32, i as u32)[c] as f64
    }))
}

pub fn to_rgb_image<T: Scalar>(x: &Tensor<T>) -> CliResult<RgbImage> {
    if x.channels() != 3 {
        return Err(CliError::Usage(format!("expected a 3-channel image, got {}", x.channels())));
    }
    let (h, w) = (x.height() as u32, x.width() as u32);
    Ok(RgbImage::from_fn(w, h, |j, i| {
        image::Rgb(std::array::from_fn(|c| quantize(x.get(c, i as usize, j as usize).as_f64())))
    }))
}

pub fn write_rgb<T: Scalar>(path: &Path, x: &Tensor<T>) -> CliResult<()> {
    to_rgb_image(x)?.save(path).map_err(|e| CliError::io(path, e))
}

/// Writes channel 0 of `map` as grayscale, mapping `[lo, hi]` onto `[0, 255]`.
pub fn write_gray<T: Scalar>(path: &Path, map: &Tensor<T>, lo: f64, hi: f64) -> CliResult<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = (map.height() as u32, map.width() as u32);
    let img = GrayImage::from_fn(w, h, |j, i| {
        let v = (map.get(0, i as usize, j as usize).as_f64() - lo) / span;
        image::Luma([quantize(v * 255.0)])
    });
    img.save(path).map_err(|e| CliError::io(path, e))
}

/// Writes a single-channel map stretched over its own min..max range.
pub fn write_gray_stretched<T: Scalar>(path: &Path, map: &Tensor<T>) -> CliResult<()> {
    let (lo, hi) = map
        .channel(0)
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
    write_gray(path, map, lo, hi)
}
