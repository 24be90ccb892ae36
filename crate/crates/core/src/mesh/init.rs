use nalgebra::{Rotation3, UnitQuaternion};

use super::{MeshError, TetraMesh};
use crate::scene::{sh, Anchor, Gaussian, Mat3, SceneModel, Vec3, SCALE_FLOOR};

/// Thickness of a face-anchored splat relative to its smaller in-plane extent.
pub const THICKNESS_RATIO: f64 = 0.05;
pub const INITIAL_OPACITY: f64 = 0.1;

/// Local frame of a triangular face: first axis along the longest edge,
/// third axis the unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFrame {
    pub face_id: usize,
    pub centroid: Vec3,
    pub normal: Vec3,
    pub axes: [Vec3; 2],
    /// Half-widths of the face along each in-plane axis, then thickness.
    pub extents: Vec3,
}

impl FaceFrame {
    pub fn new(mesh: &TetraMesh, face_id: usize) -> Option<Self> {
        let v = mesh.face_vertices(face_id)?;
        let centroid = (v[0] + v[1] + v[2]) / 3.0;
        let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
        let longest = (0..3).max_by(|&a, &b| edges[a].norm().total_cmp(&edges[b].norm())).unwrap();
        let u = edges[longest].try_normalize(1e-300).unwrap_or_else(Vec3::x);
        let n = u.cross(&edges[(longest + 1) % 3]).try_normalize(1e-300).unwrap_or_else(|| {
            // Zero-area face: any normal orthogonal to u.
            let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            u.cross(&helper).normalize()
        });
        let w = n.cross(&u);
        let ext_u = v.iter().map(|p| (p - centroid).dot(&u).abs()).fold(0.0, f64::max);
        let ext_w = v.iter().map(|p| (p - centroid).dot(&w).abs()).fold(0.0, f64::max);
        Some(Self {
            face_id,
            centroid,
            normal: n,
            axes: [u, w],
            extents: Vec3::new(ext_u, ext_w, THICKNESS_RATIO * ext_u.min(ext_w)),
        })
    }

    /// Rotation whose columns are the frame axes (in-plane, in-plane, normal).
    pub fn rotation(&self) -> Mat3 {
        Mat3::from_columns(&[self.axes[0], self.axes[1], self.normal])
    }
}

/// `w1 v1 + w2 v2 + w3 v3` for weights on the probability simplex.
pub fn barycentric_position(v1: &Vec3, v2: &Vec3, v3: &Vec3, weights: [f64; 3]) -> Result<Vec3, MeshError> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || !((sum - 1.0).abs() <= 1e-9) {
        return Err(MeshError::InvalidWeights(weights));
    }
    Ok(v1 * weights[0] + v2 * weights[1] + v3 * weights[2])
}

/// Barycentric weights for `k` splats on one face: the `k` interior points of
/// the smallest triangular lattice that has at least `k` of them, closest to
/// the centroid first.
pub fn lattice_weights(k: usize) -> Vec<[f64; 3]> {
    let mut m = 3;
    while (m - 1) * (m - 2) / 2 < k {
        m += 1;
    }
    let mut pts = Vec::new();
    for i in 1..m {
        for j in 1..m - i {
            let l = m - i - j;
            if l >= 1 {
                pts.push([i, j, l]);
            }
        }
    }
    let spread = |p: &[usize; 3]| {
        let third = m as f64 / 3.0;
        p.iter().map(|&x| (x as f64 - third).powi(2)).sum::<f64>()
    };
    pts.sort_by(|a, b| spread(a).total_cmp(&spread(b)).then_with(|| b.cmp(a)));
    pts.truncate(k);
    pts.into_iter().map(|p| p.map(|x| x as f64 / m as f64)).collect()
}

/// Places `k` anchored Gaussians on every unique face of `mesh`.
pub fn init_gaussians_on_faces(mesh: &TetraMesh, k: usize, sh_degree: usize) -> Result<SceneModel, MeshError> {
    if k == 0 {
        return Err(MeshError::InvalidSplatCount);
    }
    if mesh.faces.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let weights = lattice_weights(k);
    let coeffs = sh::coeff_count(sh_degree);
    let opacity_logit = (INITIAL_OPACITY / (1.0 - INITIAL_OPACITY)).ln();
    let in_plane = 0.5 / (k as f64).sqrt();
    let mut gaussians = Vec::with_capacity(k * mesh.faces.len());
    for face in 0..mesh.faces.len() {
        let frame = FaceFrame::new(mesh, face).expect("face index in range");
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(frame.rotation()));
        let su = (frame.extents.x * in_plane).max(SCALE_FLOOR);
        let sw = (frame.extents.y * in_plane).max(SCALE_FLOOR);
        let sn = (THICKNESS_RATIO * su.min(sw)).max(SCALE_FLOOR);
        let log_scale = Vec3::new(su.ln(), sw.ln(), sn.ln());
        let ids = mesh.faces[face];
        let [a, b, c] = ids.map(|i| mesh.vertices[i]);
        for w in &weights {
            let position = barycentric_position(&a, &b, &c, *w)?;
            let rgb = match &mesh.vertex_colors {
                Some(colors) => {
                    let mut rgb = [0.0; 3];
                    for (wi, &vi) in w.iter().zip(ids.iter()) {
                        for ch in 0..3 {
                            rgb[ch] += wi * colors[vi][ch];
                        }
                    }
                    rgb
                }
                None => [sh::SH_OFFSET; 3],
            };
            let mut coeff = vec![[0.0; 3]; coeffs];
            coeff[0] = sh::rgb_to_dc(rgb);
            gaussians.push(Gaussian {
                position,
                rotation: [q.w, q.i, q.j, q.k],
                log_scale,
                opacity_logit,
                sh: coeff,
                anchor: Some(Anchor {
                    face,
                    logits: Vec3::new(w[0].ln(), w[1].ln(), w[2].ln()),
                }),
            });
        }
    }
    Ok(SceneModel {
        gaussians,
        mesh: Some(mesh.clone()),
        sh_degree,
    })
}
