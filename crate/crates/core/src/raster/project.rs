use nalgebra::{Matrix2, Matrix2x3};

use super::{FOOTPRINT_POWER, LOW_PASS, NEAR_PLANE};
use crate::scene::{sh, Camera, Gaussian, Mat3, Vec3};

/// A Gaussian after projection to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: [f64; 2],
    /// Projected covariance `(xx, xy, yy)` before the low-pass floor.
    pub cov2d: [f64; 3],
    /// Inverse of the floored covariance, `(xx, xy, yy)`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub rgb: [f64; 3],
    pub opacity: f64,
    pub source_index: usize,
    /// Screen-space 3σ radius of the floored covariance.
    pub radius: f64,
    /// Inclusive pixel range `(x0, x1, y0, y1)` whose centres may fall inside the footprint.
    pub pixel_rect: (u32, u32, u32, u32),
}

/// Everything the backward pass needs to push gradients from a splat back
/// to its Gaussian.
#[derive(Debug, Clone)]
pub(crate) struct Intermediates {
    pub t: Vec3,
    pub j: Matrix2x3<f64>,
    pub v: Mat3,
    pub r: Mat3,
    pub scale: Vec3,
    pub quat: [f64; 4],
    pub view_dir: Vec3,
    pub view_dist: f64,
    pub rgb_raw: [f64; 3],
}

pub fn project_gaussian(g: &Gaussian, index: usize, cam: &Camera, sh_degree: usize) -> Option<ProjectedSplat> {
    project_at(g, &g.position, index, cam, sh_degree).map(|(s, _)| s)
}

pub(crate) fn project_at(
    g: &Gaussian,
    position: &Vec3,
    index: usize,
    cam: &Camera,
    sh_degree: usize,
) -> Option<(ProjectedSplat, Intermediates)> {
    let w = &cam.rotation;
    let t = w * position + cam.translation;
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let j = Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z));
    let r = g.rotation_matrix();
    let scale = g.scale();
    let m = r * Mat3::from_diagonal(&scale);
    let v = w * (m * m.transpose()) * w.transpose();
    let cov = j * v * j.transpose();
    let cov2d = [cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]];
    let floored = Matrix2::new(cov2d[0] + LOW_PASS, cov2d[1], cov2d[1], cov2d[2] + LOW_PASS);
    let det = floored.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [floored[(1, 1)] / det, -floored[(0, 1)] / det, floored[(0, 0)] / det];
    let mid = 0.5 * (floored[(0, 0)] + floored[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = (2.0 * FOOTPRINT_POWER * lambda_max).sqrt();
    let mean2d = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    let pixel_rect = pixel_range(mean2d, radius, cam)?;

    let offset = position - cam.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 { offset / view_dist } else { Vec3::z() };
    let basis = sh::basis(&view_dir, sh_degree);
    let mut rgb_raw = [sh::SH_OFFSET; 3];
    for (coeff, yk) in g.sh.iter().zip(basis.iter()) {
        for c in 0..3 {
            rgb_raw[c] += coeff[c] * yk;
        }
    }
    let splat = ProjectedSplat {
        mean2d,
        cov2d,
        conic,
        depth: z,
        rgb: rgb_raw.map(|c| c.max(0.0)),
        opacity: g.opacity(),
        source_index: index,
        radius,
        pixel_rect,
    };
    let inter = Intermediates {
        t,
        j,
        v,
        r,
        scale,
        quat: g.unit_rotation(),
        view_dir,
        view_dist,
        rgb_raw,
    };
    Some((splat, inter))
}

/// Pixels whose centres lie within `radius` of `mean` along each axis, or
/// `None` if that range misses the image.
fn pixel_range(mean: [f64; 2], radius: f64, cam: &Camera) -> Option<(u32, u32, u32, u32)> {
    // Small slack so rounding in the radius never drops a boundary pixel.
    let r = radius * (1.0 + 1e-9) + 1e-9;
    let axis = |m: f64, size: u32| -> Option<(u32, u32)> {
        let lo = (m - r - 0.5).ceil().max(0.0);
        let hi = (m + r - 0.5).floor().min(size as f64 - 1.0);
        if !(lo <= hi) {
            return None;
        }
        Some((lo as u32, hi as u32))
    };
    let (x0, x1) = axis(mean[0], cam.width)?;
    let (y0, y1) = axis(mean[1], cam.height)?;
    Some((x0, x1, y0, y1))
}
