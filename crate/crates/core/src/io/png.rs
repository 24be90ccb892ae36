//! 8-bit sRGB PNG images.
//!
//! [`ImageF`] buffers handled here are in display (sRGB-encoded) space.
//! Use [`read_png_linear`] / [`write_png_linear`] for renderer-space data.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

use crate::image::ImageF;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("{path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("image has zero size")]
    Empty,
}

/// Quantises display-space values to 8 bits with clamping.
pub fn to_rgb8(img: &ImageF) -> Vec<u8> {
    img.data.iter().map(|&v| quantize(v)).collect()
}

fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> ImageF {
    let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    ImageF::from_data(width, height, data).expect("rgb8 buffer matches its dimensions")
}

pub fn encode_png(img: &ImageF) -> Result<Vec<u8>, PngError> {
    if img.width == 0 || img.height == 0 {
        return Err(PngError::Empty);
    }
    let buf = RgbImage::from_raw(img.width, img.height, to_rgb8(img)).expect("buffer size matches");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(|source| PngError::Codec {
        path: "<memory>".into(),
        source,
    })?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageF, PngError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| PngError::Codec {
        path: "<memory>".into(),
        source,
    })?;
    let rgb = img.to_rgb8();
    Ok(from_rgb8(rgb.width(), rgb.height(), rgb.as_raw()))
}

pub fn read_png(path: &Path) -> Result<ImageF, PngError> {
    let img = image::open(path).map_err(|source| PngError::Codec {
        path: path.display().to_string(),
        source,
    })?;
    let rgb = img.to_rgb8();
    Ok(from_rgb8(rgb.width(), rgb.height(), rgb.as_raw()))
}

pub fn write_png(path: &Path, img: &ImageF) -> Result<(), PngError> {
    if img.width == 0 || img.height == 0 {
        return Err(PngError::Empty);
    }
    let buf = RgbImage::from_raw(img.width, img.height, to_rgb8(img)).expect("buffer size matches");
    buf.save_with_format(path, ImageFormat::Png).map_err(|source| PngError::Codec {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an sRGB PNG and converts it to linear values.
pub fn read_png_linear(path: &Path) -> Result<ImageF, PngError> {
    Ok(read_png(path)?.to_linear())
}

/// Encodes a linear image to sRGB and writes it.
pub fn write_png_linear(path: &Path, img: &ImageF) -> Result<(), PngError> {
    write_png(path, &img.to_srgb())
}
