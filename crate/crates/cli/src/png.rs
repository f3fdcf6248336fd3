//! PNG reading and writing for [`slotaug::image::Image`].

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use slotaug::image::Image;

use crate::error::{CliError, Result};

fn to_image(rgb: RgbImage) -> Image {
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::from_vec(w as usize, h as usize, data).expect("RGB buffer has w*h*3 values")
}

fn to_rgb(img: &Image) -> RgbImage {
    let data = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, data).expect("image has w*h*3 values")
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(to_image(img.to_rgb8()))
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    to_rgb(img).write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| CliError::io(&path, e))?;
    decode_png(&bytes)
}

pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| CliError::io(&path, e))
}

/// Read a PNG and resize it to `size x size` if needed.
pub fn read_png_sized(path: impl AsRef<Path>, size: usize) -> Result<Image> {
    let img = read_png(path)?;
    Ok(if img.width() == size && img.height() == size { img } else { img.resize(size, size) })
}
