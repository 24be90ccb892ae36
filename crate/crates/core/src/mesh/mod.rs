//! Adaptive tetrahedral mesh over a point cloud and face-anchored Gaussian
//! initialisation.

mod delaunay;
mod init;
pub mod predicates;
mod text;

use std::collections::HashMap;

use thiserror::Error;

pub use delaunay::{dedup_points, tetrahedralize, Tetrahedralization, COPLANAR_JITTER, MERGE_DISTANCE};
pub use init::{barycentric_position, init_gaussians_on_faces, lattice_weights, FaceFrame, INITIAL_OPACITY, THICKNESS_RATIO};
pub use text::{read_mesh_text, write_mesh_text};

use crate::scene::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("need at least 4 distinct points, found {found}")]
    InsufficientPoints { found: usize },
    #[error("points are degenerate (coplanar even after jitter)")]
    DegenerateInput,
    #[error("input contains a non-finite coordinate")]
    NonFinitePoint,
    #[error("barycentric weights {0:?} are not on the simplex")]
    InvalidWeights([f64; 3]),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("splats per face must be at least 1")]
    InvalidSplatCount,
    #[error("tetrahedralisation failed a robustness check: {0}")]
    Robustness(String),
    #[error("mesh text line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Delaunay tetrahedra plus their deduplicated triangular faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TetraMesh {
    pub vertices: Vec<Vec3>,
    /// Optional per-vertex colour in `[0, 1]`, used to seed Gaussian colour.
    pub vertex_colors: Option<Vec<[f64; 3]>>,
    /// Positively oriented vertex quadruples.
    pub tetrahedra: Vec<[usize; 4]>,
    /// Unique faces, vertex indices ascending.
    pub faces: Vec<[usize; 3]>,
    /// `face_of_tet[t][i]` is the face opposite vertex `i` of tetrahedron `t`.
    pub face_of_tet: Vec<[usize; 4]>,
    /// Tetrahedra incident to each face; the second entry is `None` on the hull.
    pub face_tets: Vec<[Option<usize>; 2]>,
}

impl TetraMesh {
    /// Delaunay tetrahedralisation of `points`, optionally carrying colours.
    pub fn build(points: &[Vec3], colors: Option<&[[f64; 3]]>) -> Result<Self, MeshError> {
        let tet = tetrahedralize(points)?;
        let vertex_colors = colors.map(|c| tet.source.iter().map(|&i| c[i]).collect());
        Ok(Self::from_parts(tet.vertices, vertex_colors, tet.tetrahedra))
    }

    /// Assembles a mesh from vertices and tetrahedra, deriving faces and
    /// adjacency deterministically from the tetrahedron order.
    pub fn from_parts(vertices: Vec<Vec3>, vertex_colors: Option<Vec<[f64; 3]>>, tetrahedra: Vec<[usize; 4]>) -> Self {
        let mut index: HashMap<[usize; 3], usize> = HashMap::with_capacity(tetrahedra.len() * 2);
        let mut faces = Vec::new();
        let mut face_tets: Vec<[Option<usize>; 2]> = Vec::new();
        let mut face_of_tet = Vec::with_capacity(tetrahedra.len());
        for (t, tet) in tetrahedra.iter().enumerate() {
            let mut fot = [0; 4];
            for i in 0..4 {
                let mut key = [0; 3];
                let mut k = 0;
                for (j, &v) in tet.iter().enumerate() {
                    if j != i {
                        key[k] = v;
                        k += 1;
                    }
                }
                key.sort_unstable();
                let f = *index.entry(key).or_insert_with(|| {
                    faces.push(key);
                    face_tets.push([None, None]);
                    faces.len() - 1
                });
                if face_tets[f][0].is_none() {
                    face_tets[f][0] = Some(t);
                } else {
                    face_tets[f][1] = Some(t);
                }
                fot[i] = f;
            }
            face_of_tet.push(fot);
        }
        Self {
            vertices,
            vertex_colors,
            tetrahedra,
            faces,
            face_of_tet,
            face_tets,
        }
    }

    pub fn face_vertices(&self, face: usize) -> Option<[Vec3; 3]> {
        let f = self.faces.get(face)?;
        Some(f.map(|i| self.vertices[i]))
    }

    pub fn hull_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faces.len()).filter(|&f| self.face_tets[f][1].is_none())
    }

    pub fn tet_vertices(&self, t: usize) -> [Vec3; 4] {
        self.tetrahedra[t].map(|i| self.vertices[i])
    }

    /// Whether `p` lies in the closed tetrahedron `t` (exact predicates).
    pub fn tet_contains(&self, t: usize, p: &Vec3) -> bool {
        use predicates::orient3d;
        let v = self.tet_vertices(t);
        (0..4).all(|i| {
            let mut q = v;
            q[i] = *p;
            orient3d(&q[0], &q[1], &q[2], &q[3]) >= 0.0
        })
    }

    /// First tetrahedron containing `p`, by exhaustive search.
    pub fn locate(&self, p: &Vec3) -> Option<usize> {
        (0..self.tetrahedra.len()).find(|&t| self.tet_contains(t, p))
    }

    /// Circumcentre and circumradius of tetrahedron `t`.
    pub fn circumsphere(&self, t: usize) -> (Vec3, f64) {
        let [a, b, c, d] = self.tet_vertices(t);
        let (ba, ca, da) = (b - a, c - a, d - a);
        let m = nalgebra::Matrix3::from_rows(&[ba.transpose(), ca.transpose(), da.transpose()]);
        let rhs = Vec3::new(ba.norm_squared(), ca.norm_squared(), da.norm_squared()) * 0.5;
        let off = m.lu().solve(&rhs).unwrap_or_else(Vec3::zeros);
        (a + off, off.norm())
    }
}
