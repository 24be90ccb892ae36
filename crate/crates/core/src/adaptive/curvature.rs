use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use super::{knn, AdaptiveError};
use crate::scene::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    /// Surface variation `λ0 / (λ0 + λ1 + λ2)` per point, in `[0, 1/3]`.
    pub rho: Vec<f64>,
    /// The `K` nearest neighbours of each point.
    pub neighbors: Vec<Vec<usize>>,
    /// `rho < tau`.
    pub protect: Vec<bool>,
    pub tau: f64,
}

impl CurvatureField {
    pub fn trigger_count(&self) -> usize {
        self.protect.iter().filter(|&&p| p).count()
    }
}

/// Surface variation of a point set: smallest covariance eigenvalue over the
/// eigenvalue sum. Zero for coplanar or zero-variance sets.
pub fn surface_variation(points: &[Vec3]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov).eigenvalues.map(|v| v.max(0.0));
    let sum = eig.sum();
    if !(sum > 0.0) {
        return 0.0;
    }
    eig.min() / sum
}

/// Per-point surface variation over the point and its `k` nearest neighbours.
pub fn local_curvature(positions: &[Vec3], k: usize) -> Result<(Vec<f64>, Vec<Vec<usize>>), AdaptiveError> {
    if k < 3 {
        return Err(AdaptiveError::InvalidNeighborCount(k));
    }
    if positions.len() < k + 1 {
        return Err(AdaptiveError::InsufficientPoints {
            found: positions.len(),
            needed: k + 1,
        });
    }
    let neighbors = knn(positions, k);
    let rho = neighbors
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let pts: Vec<Vec3> = std::iter::once(i).chain(nb.iter().copied()).map(|j| positions[j]).collect();
            surface_variation(&pts)
        })
        .collect();
    Ok((rho, neighbors))
}

pub fn curvature_field(positions: &[Vec3], k: usize, tau: f64) -> Result<CurvatureField, AdaptiveError> {
    let (rho, neighbors) = local_curvature(positions, k)?;
    let protect = rho.iter().map(|&r| r < tau).collect();
    Ok(CurvatureField {
        rho,
        neighbors,
        protect,
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_points_have_zero_variation() {
        let pts: Vec<Vec3> = (0..100).map(|i| Vec3::new((i % 10) as f64 * 0.37, (i / 10) as f64 * 0.21, 2.0)).collect();
        let (rho, _) = local_curvature(&pts, 8).unwrap();
        assert!(rho.iter().all(|&r| r.abs() < 1e-12));
    }

    #[test]
    fn isotropic_set_is_one_third() {
        let mut pts = Vec::new();
        for s in [-1.0, 1.0] {
            pts.push(Vec3::x() * s);
            pts.push(Vec3::y() * s);
            pts.push(Vec3::z() * s);
        }
        assert!((surface_variation(&pts) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(surface_variation(&[Vec3::x(); 5]), 0.0);
    }

    #[test]
    fn errors() {
        let pts = vec![Vec3::zeros(); 4];
        assert!(matches!(local_curvature(&pts, 4), Err(AdaptiveError::InsufficientPoints { .. })));
        assert!(matches!(local_curvature(&pts, 2), Err(AdaptiveError::InvalidNeighborCount(2))));
    }
}
