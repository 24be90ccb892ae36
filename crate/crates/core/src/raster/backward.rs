use nalgebra::Matrix2;
use rayon::prelude::*;

use super::forward::{splat_alpha, ForwardState};
use super::project::Intermediates;
use super::{fingerprint, ProjectedSplat, RasterError, RenderOptions, TileGrid};
use crate::image::ImageF;
use crate::scene::{sh, softmax3, Camera, Mat3, SceneModel, Vec3, SCALE_FLOOR};

/// Gradient of a scalar loss with respect to one Gaussian's raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrad {
    /// With respect to the rendered centre. For anchored Gaussians this is an
    /// intermediate; the trainable parameters are the barycentric logits.
    pub position: Vec3,
    /// With respect to barycentric logits (zero for free Gaussians).
    pub logits: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: Vec<[f64; 3]>,
}

impl GaussianGrad {
    pub fn zeros(coeffs: usize) -> Self {
        Self {
            position: Vec3::zeros(),
            logits: Vec3::zeros(),
            rotation: [0.0; 4],
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]; coeffs],
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        self.position += other.position;
        self.logits += other.logits;
        for i in 0..4 {
            self.rotation[i] += other.rotation[i];
        }
        self.log_scale += other.log_scale;
        self.opacity_logit += other.opacity_logit;
        for (a, b) in self.sh.iter_mut().zip(other.sh.iter()) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.logits.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }
}

/// Screen-space gradient of one splat: mean (2), conic (3), opacity, rgb (3).
type SplatGrad = [f64; 9];

/// Back-propagates `dl_dimage` (same layout as the rendered image) through
/// the forward pass recorded in `state`.
pub fn rasterize_backward(
    scene: &SceneModel,
    cam: &Camera,
    state: &ForwardState,
    dl_dimage: &ImageF,
) -> Result<Vec<GaussianGrad>, RasterError> {
    let options = RenderOptions {
        background: state.background,
    };
    if fingerprint(scene, cam, &options) != state.fingerprint {
        return Err(RasterError::StaleState);
    }
    let expected = 3 * cam.pixel_count();
    if dl_dimage.data.len() != expected || dl_dimage.width != cam.width {
        return Err(RasterError::GradientShape {
            expected,
            found: dl_dimage.data.len(),
        });
    }
    let grid = TileGrid::new(cam);
    let partials: Vec<Vec<SplatGrad>> = (0..grid.count())
        .into_par_iter()
        .map(|t| tile_backward(t, &grid, cam, state, dl_dimage))
        .collect();
    let mut screen = vec![[0.0; 9]; state.splats.len()];
    for (list, part) in state.tiles.iter().zip(partials.iter()) {
        for (&si, g) in list.iter().zip(part.iter()) {
            let acc = &mut screen[si as usize];
            for k in 0..9 {
                acc[k] += g[k];
            }
        }
    }

    let coeffs = sh::coeff_count(scene.sh_degree);
    let per_splat: Vec<(usize, GaussianGrad)> = state
        .splats
        .par_iter()
        .zip(state.inter.par_iter())
        .zip(screen.par_iter())
        .map(|((s, inter), g)| {
            let i = s.source_index;
            (i, gaussian_backward(scene, i, cam, s, inter, g))
        })
        .collect();
    let mut grads = vec![GaussianGrad::zeros(coeffs); scene.len()];
    for (i, g) in per_splat {
        grads[i] = g;
    }
    Ok(grads)
}

fn tile_backward(t: usize, grid: &TileGrid, cam: &Camera, state: &ForwardState, dl: &ImageF) -> Vec<SplatGrad> {
    let list = &state.tiles[t];
    let mut out = vec![[0.0; 9]; list.len()];
    if list.is_empty() {
        return out;
    }
    let (x0, x1, y0, y1) = grid.bounds(t, cam);
    let bg = state.background;
    // (list position, alpha, transmittance before the splat)
    let mut chain: Vec<(usize, f64, f64)> = Vec::with_capacity(list.len());
    for py in y0..y1 {
        for px in x0..x1 {
            let p = (py * cam.width + px) as usize;
            let g = dl.get(px, py);
            if g == [0.0; 3] {
                continue;
            }
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            chain.clear();
            let mut tr = 1.0;
            for (k, &si) in list[..state.last[p] as usize].iter().enumerate() {
                if let Some(alpha) = splat_alpha(&state.splats[si as usize], x, y) {
                    chain.push((k, alpha, tr));
                    tr *= 1.0 - alpha;
                }
            }
            // Colour composited behind the current splat.
            let mut behind = [0.0; 3];
            for ch in 0..3 {
                behind[ch] = state.final_t[p] * bg[ch];
            }
            for &(k, alpha, tr) in chain.iter().rev() {
                let s = &state.splats[list[k] as usize];
                let acc = &mut out[k];
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    acc[6 + ch] += g[ch] * alpha * tr;
                    d_alpha += g[ch] * (s.rgb[ch] * tr - behind[ch] / (1.0 - alpha));
                    behind[ch] += s.rgb[ch] * alpha * tr;
                }
                accumulate_alpha_grad(s, x, y, alpha, d_alpha, acc);
            }
        }
    }
    out
}

#[inline]
fn accumulate_alpha_grad(s: &ProjectedSplat, x: f64, y: f64, alpha: f64, d_alpha: f64, acc: &mut SplatGrad) {
    let dx = x - s.mean2d[0];
    let dy = y - s.mean2d[1];
    let [a, b, c] = s.conic;
    let power = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy;
    let gauss = (-power).exp();
    if s.opacity * gauss > super::MAX_ALPHA {
        // Clamped: alpha does not depend on the parameters here.
        return;
    }
    acc[5] += d_alpha * gauss;
    let d_power = -d_alpha * alpha;
    // d(power)/d(mean) = -conic · d
    acc[0] -= d_power * (a * dx + b * dy);
    acc[1] -= d_power * (b * dx + c * dy);
    acc[2] += d_power * 0.5 * dx * dx;
    acc[3] += d_power * dx * dy;
    acc[4] += d_power * 0.5 * dy * dy;
}

fn gaussian_backward(
    scene: &SceneModel,
    index: usize,
    cam: &Camera,
    s: &ProjectedSplat,
    inter: &Intermediates,
    g: &SplatGrad,
) -> GaussianGrad {
    let gauss = &scene.gaussians[index];
    let coeffs = sh::coeff_count(scene.sh_degree);
    let mut out = GaussianGrad::zeros(coeffs);

    // Colour: clamp mask, SH coefficients, view direction.
    let mut d_rgb = [0.0; 3];
    for ch in 0..3 {
        if inter.rgb_raw[ch] >= 0.0 {
            d_rgb[ch] = g[6 + ch];
        }
    }
    let (basis, basis_grad) = sh::basis_and_gradient(&inter.view_dir, scene.sh_degree);
    let mut d_dir = Vec3::zeros();
    for k in 0..coeffs {
        let mut dot = 0.0;
        for ch in 0..3 {
            out.sh[k][ch] = basis[k] * d_rgb[ch];
            dot += gauss.sh[k][ch] * d_rgb[ch];
        }
        d_dir += Vec3::from(basis_grad[k]) * dot;
    }
    let mut d_pos = Vec3::zeros();
    if inter.view_dist > 0.0 {
        let dvec = &inter.view_dir;
        d_pos += (d_dir - dvec * dvec.dot(&d_dir)) / inter.view_dist;
    }

    let o = s.opacity;
    out.opacity_logit = g[5] * o * (1.0 - o);

    // Conic -> floored covariance: dL/dΣ'' = -Q G Q with G the symmetric
    // matrix form of the conic gradient.
    let q = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let gq = Matrix2::new(g[2], 0.5 * g[3], 0.5 * g[3], g[4]);
    let d_cov2 = -(q * gq * q);

    let j = &inter.j;
    let v = &inter.v;
    let d_v: Mat3 = j.transpose() * d_cov2 * j;
    let d_j = 2.0 * d_cov2 * j * v;

    let t = &inter.t;
    let (fx, fy) = (cam.fx, cam.fy);
    let (z, z2, z3) = (t.z, t.z * t.z, t.z * t.z * t.z);
    let mut d_t = Vec3::new(
        d_j[(0, 2)] * (-fx / z2),
        d_j[(1, 2)] * (-fy / z2),
        d_j[(0, 0)] * (-fx / z2) + d_j[(0, 2)] * (2.0 * fx * t.x / z3) + d_j[(1, 1)] * (-fy / z2) + d_j[(1, 2)] * (2.0 * fy * t.y / z3),
    );
    d_t.x += g[0] * fx / z;
    d_t.y += g[1] * fy / z;
    d_t.z += -g[0] * fx * t.x / z2 - g[1] * fy * t.y / z2;
    d_pos += cam.rotation.transpose() * d_t;

    // Σ = M Mᵀ with M = R S.
    let w = &cam.rotation;
    let d_sigma = w.transpose() * d_v * w;
    let d_sigma = 0.5 * (d_sigma + d_sigma.transpose());
    let m = inter.r * Mat3::from_diagonal(&inter.scale);
    let d_m = 2.0 * d_sigma * m;
    let rt_dm = inter.r.transpose() * d_m;
    for i in 0..3 {
        let raw = gauss.log_scale[i].exp();
        if raw >= SCALE_FLOOR {
            out.log_scale[i] = rt_dm[(i, i)] * inter.scale[i];
        }
    }
    let d_r = d_m * Mat3::from_diagonal(&inter.scale);
    out.rotation = quaternion_backward(&gauss.rotation, &inter.quat, &d_r);

    out.position = d_pos;
    if let Some(anchor) = &gauss.anchor {
        if let Some(verts) = scene.mesh.as_ref().and_then(|m| m.face_vertices(anchor.face)) {
            let w = softmax3(&anchor.logits);
            let d_w = verts.map(|v| v.dot(&d_pos));
            let mean: f64 = (0..3).map(|i| w[i] * d_w[i]).sum();
            out.logits = Vec3::new(w[0] * (d_w[0] - mean), w[1] * (d_w[1] - mean), w[2] * (d_w[2] - mean));
        }
    }
    out
}

/// Gradient with respect to the raw quaternion given `dL/dR` for the
/// rotation built from its normalisation `unit`.
fn quaternion_backward(raw: &[f64; 4], unit: &[f64; 4], d_r: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = *unit;
    let dr_dw = Mat3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dr_dx = Mat3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dr_dy = Mat3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dr_dz = Mat3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    let g = [d_r.dot(&dr_dw), d_r.dot(&dr_dx), d_r.dot(&dr_dy), d_r.dot(&dr_dz)];
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-300 || !norm.is_finite() {
        return [0.0; 4];
    }
    let proj: f64 = (0..4).map(|i| unit[i] * g[i]).sum();
    [0, 1, 2, 3].map(|i| (g[i] - unit[i] * proj) / norm)
}
