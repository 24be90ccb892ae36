use super::AdaptiveError;
use crate::raster::rasterize;
use crate::scene::{Camera, SceneModel};

pub const VOLUME_PERCENTILE: f64 = 0.9;
pub const VOLUME_EXPONENT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub scores: Vec<f64>,
    /// Number of rays each Gaussian contributed to, over all views.
    pub hits: Vec<u64>,
    pub views: usize,
    /// Total rays cast (`Σ width·height`).
    pub rays: u64,
}

/// Normalised volume term per Gaussian: `min(V / V90, 1)^0.1` with `V` the
/// product of activated scales and `V90` its nearest-rank 90th percentile.
pub fn volume_terms(scene: &SceneModel) -> Vec<f64> {
    let volumes: Vec<f64> = scene.gaussians.iter().map(|g| g.scale().iter().product()).collect();
    if volumes.is_empty() {
        return Vec::new();
    }
    let mut sorted = volumes.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = ((VOLUME_PERCENTILE * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let v90 = sorted[rank - 1];
    volumes.iter().map(|v| (v / v90).min(1.0).powf(VOLUME_EXPONENT)).collect()
}

/// Global importance `GS_j = hits_j · opacity_j · γ_j` over every pixel of every view.
pub fn accumulate_importance(scene: &SceneModel, cameras: &[Camera]) -> Result<ImportanceScores, AdaptiveError> {
    if cameras.is_empty() {
        return Err(AdaptiveError::NoCameras);
    }
    let mut hits = vec![0u64; scene.len()];
    let mut rays = 0u64;
    for cam in cameras {
        let out = rasterize(scene, cam)?;
        for (h, v) in hits.iter_mut().zip(&out.hits) {
            *h += v;
        }
        rays += cam.pixel_count() as u64;
    }
    let gamma = volume_terms(scene);
    let scores = scene
        .gaussians
        .iter()
        .zip(&hits)
        .zip(&gamma)
        .map(|((g, &h), &y)| h as f64 * g.opacity() * y)
        .collect();
    Ok(ImportanceScores {
        scores,
        hits,
        views: cameras.len(),
        rays,
    })
}
