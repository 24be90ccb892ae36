//! Tile-based CPU splatting: projection, front-to-back compositing and the
//! matching analytic backward pass.

mod backward;
mod forward;
mod project;

use std::hash::{DefaultHasher, Hasher};

use thiserror::Error;

pub use backward::{rasterize_backward, GaussianGrad};
pub use forward::{rasterize, render_forward, ForwardState, RenderOutput};
pub use project::{project_gaussian, ProjectedSplat};

use crate::scene::{Camera, SceneError, SceneModel};

pub const TILE_SIZE: u32 = 16;
/// Added to the diagonal of the projected covariance before inversion (px²).
pub const LOW_PASS: f64 = 0.3;
pub const NEAR_PLANE: f64 = 0.01;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
pub const MAX_ALPHA: f64 = 0.99;
/// A splat's footprint is its 3σ ellipse: `½ dᵀ conic d <= 4.5`. Outside it
/// the splat contributes nothing.
pub const FOOTPRINT_POWER: f64 = 4.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("gaussian {index} has non-finite parameters")]
    NonFinite { index: usize },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("forward state does not match the scene and camera passed to backward")]
    StaleState,
    #[error("upstream gradient is {found} values, expected {expected}")]
    GradientShape { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: [0.0; 3] }
    }
}

/// Hash of everything a render depends on, used to detect stale forward state.
pub(crate) fn fingerprint(scene: &SceneModel, cam: &Camera, options: &RenderOptions) -> u64 {
    let mut h = DefaultHasher::new();
    let mut put = |v: f64| h.write_u64(v.to_bits());
    for g in &scene.gaussians {
        g.position.iter().for_each(|&v| put(v));
        g.rotation.iter().for_each(|&v| put(v));
        g.log_scale.iter().for_each(|&v| put(v));
        put(g.opacity_logit);
        g.sh.iter().flatten().for_each(|&v| put(v));
        if let Some(a) = &g.anchor {
            put(a.face as f64);
            a.logits.iter().for_each(|&v| put(v));
        }
    }
    [cam.fx, cam.fy, cam.cx, cam.cy, cam.width as f64, cam.height as f64]
        .iter()
        .chain(cam.rotation.iter())
        .chain(cam.translation.iter())
        .chain(options.background.iter())
        .for_each(|&v| put(v));
    h.write_usize(scene.gaussians.len());
    h.write_usize(scene.sh_degree);
    h.finish()
}

pub(crate) struct TileGrid {
    pub tiles_x: u32,
    pub tiles_y: u32,
}

impl TileGrid {
    pub fn new(cam: &Camera) -> Self {
        Self {
            tiles_x: cam.width.div_ceil(TILE_SIZE),
            tiles_y: cam.height.div_ceil(TILE_SIZE),
        }
    }

    pub fn count(&self) -> usize {
        (self.tiles_x * self.tiles_y) as usize
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of tile `t`.
    pub fn bounds(&self, t: usize, cam: &Camera) -> (u32, u32, u32, u32) {
        let tx = t as u32 % self.tiles_x;
        let ty = t as u32 / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(cam.width), y0, (y0 + TILE_SIZE).min(cam.height))
    }
}
