//! Image quality metrics on display-range `[0, 1]` images.

use crate::image::{ImageError, ImageF};

/// Reported in place of an infinite PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &ImageF, b: &ImageF) -> Result<f64, ImageError> {
    a.check_same_size(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64, ImageError> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP))
}

pub use crate::loss::ssim;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_capped() {
        let a = ImageF::filled(5, 5, [0.3, 0.1, 0.9]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_is_20_db() {
        let a = ImageF::filled(16, 16, [0.25; 3]);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }
}
