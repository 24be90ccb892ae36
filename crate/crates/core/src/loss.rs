//! Photometric loss `(1-λ)·L1 + λ·(1-SSIM)` with analytic gradients.

use crate::image::{ImageError, ImageF};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same"-size Gaussian filter with zero padding.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels, and optionally its gradient with
/// respect to `x`.
pub fn ssim_with_grad(x: &ImageF, y: &ImageF, want_grad: bool) -> Result<(f64, Option<ImageF>), ImageError> {
    x.check_same_size(y)?;
    let (w, h) = (x.width as usize, x.height as usize);
    let k = gaussian_kernel();
    let m = (3 * w * h) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| ImageF::new(x.width, x.height));
    for c in 0..3 {
        let xp = x.channel(c);
        let yp = y.channel(c);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let mu_x = blur(&xp, w, h, &k);
        let mu_y = blur(&yp, w, h, &k);
        let e_xx = blur(&sq(&xp, &xp), w, h, &k);
        let e_yy = blur(&sq(&yp, &yp), w, h, &k);
        let e_xy = blur(&sq(&xp, &yp), w, h, &k);
        let n = w * h;
        let mut d_mu = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * (e_xy[p] - mx * my) + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = (e_xx[p] - mx * mx) + (e_yy[p] - my * my) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                // Grouped so the terms cancel exactly when x == y.
                d_mu[p] = s * ((2.0 * my / a1 - 2.0 * mx / b1) + (2.0 * mx / b2 - 2.0 * my / a2)) / m;
                d_exx[p] = -s / b2 / m;
                d_exy[p] = 2.0 * s / a2 / m;
            }
        }
        if let Some(g) = grad.as_mut() {
            // The filter is symmetric, so its adjoint is itself.
            let g_mu = blur(&d_mu, w, h, &k);
            let g_xx = blur(&d_exx, w, h, &k);
            let g_xy = blur(&d_exy, w, h, &k);
            for p in 0..n {
                g.data[3 * p + c] = g_mu[p] + 2.0 * xp[p] * g_xx[p] + yp[p] * g_xy[p];
            }
        }
    }
    Ok((total / m, grad))
}

pub fn ssim(x: &ImageF, y: &ImageF) -> Result<f64, ImageError> {
    ssim_with_grad(x, y, false).map(|(s, _)| s)
}

/// Returns the loss and its gradient with respect to `rendered`.
pub fn photometric_loss(rendered: &ImageF, target: &ImageF, lambda: f64) -> Result<(f64, ImageF), ImageError> {
    rendered.check_same_size(target)?;
    let m = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = ImageF::new(rendered.width, rendered.height);
    for ((g, &r), &t) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        let d = r - t;
        l1 += d.abs();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = (1.0 - lambda) * sign / m;
    }
    l1 /= m;
    if lambda == 0.0 {
        return Ok((l1, grad));
    }
    let (s, sg) = ssim_with_grad(rendered, target, true)?;
    let sg = sg.expect("gradient requested");
    for (g, d) in grad.data.iter_mut().zip(&sg.data) {
        *g -= lambda * d;
    }
    Ok(((1.0 - lambda) * l1 + lambda * (1.0 - s), grad))
}
