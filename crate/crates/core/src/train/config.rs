use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::adaptive::{DEFAULT_NEIGHBORS, DEFAULT_PRUNE_RATIO, DEFAULT_TAU};
use crate::scene::sh;

/// Per-class learning rates. Position rates are multiplied by the scene
/// extent; position and logit rates decay exponentially from `*_init` to
/// `*_final` over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub logits_init: f64,
    pub logits_final: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            logits_init: 1.6e-4,
            logits_final: 1.6e-6,
            opacity: 0.05,
            scale: 5e-3,
            rotation: 1e-3,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub prune_iters: Vec<usize>,
    pub densify_iters: Vec<usize>,
    pub prune_ratio: f64,
    pub lr: LearningRates,
    /// Weight of the D-SSIM term in the photometric loss.
    pub dssim_weight: f64,
    /// Gaussians per mesh face at initialisation.
    pub k: usize,
    /// Curvature threshold for protection and densification.
    pub tau: f64,
    /// Neighbourhood size for curvature.
    pub knn: usize,
    /// Whether low-curvature Gaussians are exempt from pruning.
    pub protect: bool,
    pub eval_every: usize,
    /// Every n-th view (starting at 0) is held out for evaluation.
    pub holdout_every: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 30_000,
            prune_iters: vec![12_000, 20_000],
            densify_iters: vec![12_000, 20_000],
            prune_ratio: DEFAULT_PRUNE_RATIO,
            lr: LearningRates::default(),
            dssim_weight: 0.2,
            k: 3,
            tau: DEFAULT_TAU,
            knn: DEFAULT_NEIGHBORS,
            protect: true,
            eval_every: 1000,
            holdout_every: 8,
            sh_degree: 3,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.total_iters == 0 {
            return bad("total_iters must be positive".into());
        }
        for &i in self.prune_iters.iter().chain(&self.densify_iters) {
            if i == 0 || i >= self.total_iters {
                return bad(format!("event iteration {i} must lie in [1, total_iters)"));
            }
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio < 1.0) {
            return bad(format!("prune_ratio must lie in (0, 1), got {}", self.prune_ratio));
        }
        if !(0.0..=1.0).contains(&self.dssim_weight) {
            return bad(format!("dssim_weight must lie in [0, 1], got {}", self.dssim_weight));
        }
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.knn < 3 {
            return bad(format!("knn must be at least 3, got {}", self.knn));
        }
        if !(self.tau >= 0.0) {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if self.holdout_every == 1 {
            return bad("holdout_every = 1 leaves no training views".into());
        }
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return bad(format!("sh_degree must be at most {}", sh::MAX_SH_DEGREE));
        }
        let lr = &self.lr;
        let rates = [
            lr.position_init,
            lr.position_final,
            lr.logits_init,
            lr.logits_final,
            lr.opacity,
            lr.scale,
            lr.rotation,
            lr.sh_dc,
            lr.sh_rest,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("learning rates must be finite and non-negative".into());
        }
        if (lr.position_init > 0.0) != (lr.position_final > 0.0) || (lr.logits_init > 0.0) != (lr.logits_final > 0.0) {
            return bad("decayed rates must be both zero or both positive".into());
        }
        Ok(())
    }
}

/// `a^(1-t) b^t` for `t = iter / total`.
pub fn exponential_decay(init: f64, fin: f64, iter: usize, total: usize) -> f64 {
    if init <= 0.0 || fin <= 0.0 {
        return 0.0;
    }
    let t = (iter as f64 / total.max(1) as f64).clamp(0.0, 1.0);
    (init.ln() * (1.0 - t) + fin.ln() * t).exp()
}
