use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::AdaptiveError;
use crate::scene::{Mat3, SceneModel, Vec3};

/// Clones are shrunk by this factor per axis.
pub const CLONE_SHRINK: f64 = 1.6;
/// Clone offsets are drawn from the parent covariance scaled by this.
pub const CLONE_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneStatus {
    /// The full quota was removed.
    Complete,
    /// Some of the lowest-ranked Gaussians were protected and kept.
    QuotaUnmet,
    /// Every Gaussian is protected; nothing was removed.
    AllProtected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    /// Surviving indices in their original order.
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// `⌊ratio · N⌋`.
    pub quota: usize,
    pub status: PruneStatus,
}

/// Ranks by `(score, index)` and removes the unprotected members of the
/// bottom `⌊ratio · N⌋`. Protected members are skipped, not replaced.
pub fn prune_selection(scores: &[f64], ratio: f64, protect: Option<&[bool]>) -> Result<PruneOutcome, AdaptiveError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(AdaptiveError::InvalidRatio(ratio));
    }
    let n = scores.len();
    if let Some(mask) = protect {
        if mask.len() != n {
            return Err(AdaptiveError::Misaligned {
                what: "protect mask",
                expected: n,
                found: mask.len(),
            });
        }
    }
    let is_protected = |i: usize| protect.is_some_and(|m| m[i]);
    // The epsilon keeps products like 0.29 * 100 from flooring to 28.
    let quota = ((ratio * n as f64) + 1e-9).floor() as usize;
    if n > 0 && (0..n).all(is_protected) {
        return Ok(PruneOutcome {
            kept: (0..n).collect(),
            removed: Vec::new(),
            quota,
            status: PruneStatus::AllProtected,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut drop = vec![false; n];
    let mut removed: Vec<usize> = order[..quota].iter().copied().filter(|&i| !is_protected(i)).collect();
    for &i in &removed {
        drop[i] = true;
    }
    removed.sort_unstable();
    let status = if removed.len() == quota {
        PruneStatus::Complete
    } else {
        PruneStatus::QuotaUnmet
    };
    Ok(PruneOutcome {
        kept: (0..n).filter(|&i| !drop[i]).collect(),
        removed,
        quota,
        status,
    })
}

/// Removes low-importance Gaussians. The mesh is dropped once nothing is
/// anchored to it.
pub fn prune(scene: &SceneModel, scores: &[f64], ratio: f64, protect: Option<&[bool]>) -> Result<(SceneModel, PruneOutcome), AdaptiveError> {
    if scores.len() != scene.len() {
        return Err(AdaptiveError::Misaligned {
            what: "scores",
            expected: scene.len(),
            found: scores.len(),
        });
    }
    let outcome = prune_selection(scores, ratio, protect)?;
    if outcome.status == PruneStatus::AllProtected {
        log::warn!("prune skipped: all {} gaussians are protected", scene.len());
    }
    let mut out = SceneModel {
        gaussians: outcome.kept.iter().map(|&i| scene.gaussians[i].clone()).collect(),
        mesh: scene.mesh.clone(),
        sh_degree: scene.sh_degree,
    };
    out.release_unused_mesh();
    Ok((out, outcome))
}

/// Appends one un-anchored clone for every Gaussian with `rho < tau`, in
/// index order. Returns the new scene and the number of clones.
pub fn densify_low_curvature(scene: &SceneModel, rho: &[f64], tau: f64, seed: u64) -> Result<(SceneModel, usize), AdaptiveError> {
    if rho.len() != scene.len() {
        return Err(AdaptiveError::Misaligned {
            what: "curvature",
            expected: scene.len(),
            found: rho.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = scene.clone();
    let shrink = CLONE_SHRINK.ln();
    for (g, &r) in scene.gaussians.iter().zip(rho) {
        if !(r < tau) {
            continue;
        }
        let z = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let centre = match &g.anchor {
            Some(a) => scene.anchored_position(a).unwrap_or(g.position),
            None => g.position,
        };
        let m = g.rotation_matrix() * Mat3::from_diagonal(&g.scale());
        let mut clone = g.clone();
        clone.position = centre + CLONE_SPREAD * (m * z);
        clone.log_scale = g.log_scale.map(|s| s - shrink);
        clone.anchor = None;
        out.gaussians.push(clone);
    }
    let added = out.len() - scene.len();
    Ok((out, added))
}
