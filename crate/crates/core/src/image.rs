//! Float RGB images and the sRGB transfer function.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("buffer of {found} values cannot hold a {width}x{height} RGB image")]
    BadBuffer { width: u32, height: u32, found: usize },
}

/// Row-major interleaved RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(3 * n);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != 3 * width as usize * height as usize {
            return Err(ImageError::BadBuffer {
                width,
                height,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn check_same_size(&self, other: &ImageF) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::SizeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageF {
        ImageF {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// One channel as a plane of `width * height` values.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    pub fn to_srgb(&self) -> ImageF {
        self.map(linear_to_srgb)
    }

    pub fn to_linear(&self) -> ImageF {
        self.map(srgb_to_linear)
    }
}

/// Standard sRGB decoding curve on `[0, 1]`.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Standard sRGB encoding curve; input is clamped to `[0, 1]`.
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}
