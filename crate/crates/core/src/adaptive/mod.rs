//! Importance-ranked pruning and curvature-aware densification.

mod control;
mod curvature;
mod importance;
mod knn;

use thiserror::Error;

pub use control::{densify_low_curvature, prune, prune_selection, PruneOutcome, PruneStatus};
pub use curvature::{curvature_field, local_curvature, surface_variation, CurvatureField};
pub use importance::{accumulate_importance, volume_terms, ImportanceScores, VOLUME_EXPONENT, VOLUME_PERCENTILE};
pub use knn::{knn, BRUTE_FORCE_LIMIT};

use crate::raster::RasterError;

pub const DEFAULT_NEIGHBORS: usize = 16;
pub const DEFAULT_TAU: f64 = 0.02;
pub const DEFAULT_PRUNE_RATIO: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptiveError {
    #[error("importance needs at least one camera")]
    NoCameras,
    #[error("curvature needs at least {needed} points, found {found}")]
    InsufficientPoints { found: usize, needed: usize },
    #[error("neighbourhood size must be at least 3, got {0}")]
    InvalidNeighborCount(usize),
    #[error("ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("{what} has {found} entries but the scene has {expected} gaussians")]
    Misaligned { what: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
}
