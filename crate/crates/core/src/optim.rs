//! Adam over the flattened per-Gaussian parameter rows.
//!
//! Row layout: `[position or barycentric logits (3), rotation (4),
//! log scale (3), opacity logit (1), SH (3 per coefficient)]`.

use crate::raster::GaussianGrad;
use crate::scene::{sh, Gaussian, SceneModel};

pub const POS: usize = 0;
pub const ROT: usize = 3;
pub const SCALE: usize = 7;
pub const OPACITY: usize = 10;
pub const SH: usize = 11;

pub fn row_len(sh_degree: usize) -> usize {
    SH + 3 * sh::coeff_count(sh_degree)
}

/// Learning rates for one step, per parameter class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRates {
    pub position: f64,
    pub logits: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub stride: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(count: usize, sh_degree: usize) -> Self {
        let stride = row_len(sh_degree);
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            stride,
            m: vec![0.0; count * stride],
            v: vec![0.0; count * stride],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len() / self.stride
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one update. Anchored Gaussians get the position slot's update
    /// on their logits; callers must refresh anchored positions afterwards.
    pub fn update(&mut self, scene: &mut SceneModel, grads: &[GaussianGrad], rates: &StepRates) {
        assert_eq!(scene.len(), self.len());
        assert_eq!(grads.len(), self.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut row_g = vec![0.0; self.stride];
        let mut row_lr = vec![0.0; self.stride];
        let mut delta = vec![0.0; self.stride];
        for (i, (g, grad)) in scene.gaussians.iter_mut().zip(grads).enumerate() {
            let anchored = g.anchor.is_some();
            flatten_grad(grad, anchored, &mut row_g);
            fill_rates(rates, anchored, &mut row_lr);
            let base = i * self.stride;
            for k in 0..self.stride {
                let m = &mut self.m[base + k];
                let v = &mut self.v[base + k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * row_g[k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * row_g[k] * row_g[k];
                delta[k] = -row_lr[k] * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            apply_delta(g, &delta);
        }
    }

    /// Keeps the moments of the listed rows, in order.
    pub fn retain_rows(&mut self, keep: &[usize]) {
        let s = self.stride;
        let pick = |src: &[f64]| keep.iter().flat_map(|&i| src[i * s..(i + 1) * s].iter().copied()).collect();
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    /// Appends zeroed moments for new rows.
    pub fn push_rows(&mut self, count: usize) {
        self.m.resize(self.m.len() + count * self.stride, 0.0);
        self.v.resize(self.v.len() + count * self.stride, 0.0);
    }
}

fn flatten_grad(g: &GaussianGrad, anchored: bool, row: &mut [f64]) {
    let p = if anchored { g.logits } else { g.position };
    row[POS..POS + 3].copy_from_slice(p.as_slice());
    row[ROT..ROT + 4].copy_from_slice(&g.rotation);
    row[SCALE..SCALE + 3].copy_from_slice(g.log_scale.as_slice());
    row[OPACITY] = g.opacity_logit;
    for (k, c) in g.sh.iter().enumerate() {
        row[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c);
    }
}

fn fill_rates(r: &StepRates, anchored: bool, row: &mut [f64]) {
    row[POS..POS + 3].fill(if anchored { r.logits } else { r.position });
    row[ROT..ROT + 4].fill(r.rotation);
    row[SCALE..SCALE + 3].fill(r.scale);
    row[OPACITY] = r.opacity;
    row[SH..SH + 3].fill(r.sh_dc);
    row[SH + 3..].fill(r.sh_rest);
}

fn apply_delta(g: &mut Gaussian, d: &[f64]) {
    match g.anchor.as_mut() {
        Some(a) => {
            for k in 0..3 {
                a.logits[k] += d[POS + k];
            }
        }
        None => {
            for k in 0..3 {
                g.position[k] += d[POS + k];
            }
        }
    }
    for k in 0..4 {
        g.rotation[k] += d[ROT + k];
    }
    for k in 0..3 {
        g.log_scale[k] += d[SCALE + k];
    }
    g.opacity_logit += d[OPACITY];
    for (k, c) in g.sh.iter_mut().enumerate() {
        for ch in 0..3 {
            c[ch] += d[SH + 3 * k + ch];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Vec3;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut scene = SceneModel::new(0);
        scene.gaussians.push(Gaussian::isotropic(Vec3::zeros(), 1.0, 0.5, [0.5; 3], 0));
        let mut adam = Adam::new(1, 0);
        let mut grad = GaussianGrad::zeros(1);
        grad.position = Vec3::new(2.0, -3.0, 0.0);
        grad.opacity_logit = 0.5;
        let rates = StepRates {
            position: 0.1,
            logits: 0.0,
            rotation: 0.0,
            scale: 0.0,
            opacity: 0.01,
            sh_dc: 0.0,
            sh_rest: 0.0,
        };
        adam.update(&mut scene, &[grad], &rates);
        let g = &scene.gaussians[0];
        assert!((g.position.x + 0.1).abs() < 1e-12);
        assert!((g.position.y - 0.1).abs() < 1e-12);
        assert_eq!(g.position.z, 0.0);
        assert!((g.opacity_logit + 0.01).abs() < 1e-12);
    }

    #[test]
    fn retain_and_push_rows() {
        let mut adam = Adam::new(3, 0);
        for (i, v) in adam.m.iter_mut().enumerate() {
            *v = i as f64;
        }
        adam.retain_rows(&[2, 0]);
        assert_eq!(adam.len(), 2);
        assert_eq!(adam.m[0], (2 * adam.stride) as f64);
        assert_eq!(adam.m[adam.stride], 0.0);
        adam.push_rows(1);
        assert_eq!(adam.len(), 3);
    }
}
