//! Gaussian primitive, scene container and pinhole camera.

mod camera;
mod gaussian;
pub mod sh;

use thiserror::Error;

pub use camera::Camera;
pub use gaussian::{sigmoid, softmax3, Anchor, Gaussian, MAX_CONDITION, SCALE_FLOOR};

use crate::mesh::TetraMesh;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("SH coefficient count mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("SH degree {0} is not supported (maximum 3)")]
    UnsupportedShDegree(usize),
    #[error("degenerate covariance: condition number {condition:e} exceeds cap")]
    DegenerateCovariance { condition: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("gaussian {index} is anchored to face {face}, which does not exist")]
    InvalidAnchor { index: usize, face: usize },
    #[error("gaussian {index} is anchored but the scene carries no mesh")]
    MissingMesh { index: usize },
}

/// A collection of Gaussians plus the (optional) tetrahedral mesh that anchored
/// Gaussians are attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub gaussians: Vec<Gaussian>,
    pub mesh: Option<TetraMesh>,
    pub sh_degree: usize,
}

impl SceneModel {
    pub fn new(sh_degree: usize) -> Self {
        Self {
            gaussians: Vec::new(),
            mesh: None,
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn anchored_count(&self) -> usize {
        self.gaussians.iter().filter(|g| g.anchor.is_some()).count()
    }

    /// Checks SH shapes and that every anchor refers to an existing face.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.sh_degree > sh::MAX_SH_DEGREE {
            return Err(SceneError::UnsupportedShDegree(self.sh_degree));
        }
        let coeffs = sh::coeff_count(self.sh_degree);
        for (index, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != coeffs {
                return Err(SceneError::ShapeMismatch {
                    expected: coeffs,
                    found: g.sh.len(),
                });
            }
            if let Some(anchor) = &g.anchor {
                let mesh = self.mesh.as_ref().ok_or(SceneError::MissingMesh { index })?;
                if anchor.face >= mesh.faces.len() {
                    return Err(SceneError::InvalidAnchor {
                        index,
                        face: anchor.face,
                    });
                }
            }
        }
        Ok(())
    }

    /// Position of an anchored Gaussian from its face and barycentric logits.
    pub fn anchored_position(&self, anchor: &Anchor) -> Option<Vec3> {
        let mesh = self.mesh.as_ref()?;
        let [a, b, c] = mesh.face_vertices(anchor.face)?;
        let w = softmax3(&anchor.logits);
        Some(a * w[0] + b * w[1] + c * w[2])
    }

    /// Recomputes the cached position of every anchored Gaussian. Anchored
    /// positions are never free parameters; this must run after any change to
    /// barycentric logits.
    pub fn refresh_anchored_positions(&mut self) {
        let Some(mesh) = self.mesh.as_ref() else {
            return;
        };
        for g in &mut self.gaussians {
            if let Some(anchor) = &g.anchor {
                if let Some([a, b, c]) = mesh.face_vertices(anchor.face) {
                    let w = softmax3(&anchor.logits);
                    g.position = a * w[0] + b * w[1] + c * w[2];
                }
            }
        }
    }

    /// Drops the mesh once nothing is anchored to it any more.
    pub fn release_unused_mesh(&mut self) {
        if self.mesh.is_some() && self.anchored_count() == 0 {
            self.mesh = None;
        }
    }
}
