//! Codebook quantisation of per-Gaussian attribute groups.

mod kmeans;
mod report;

use thiserror::Error;

pub use kmeans::{assign, kmeans, nearest, KMeans, DEFAULT_MAX_ITERS, REL_TOLERANCE};
pub use report::{compression_report, CompressionReport, GroupBytes, ReportStatus};

use crate::mesh::TetraMesh;
use crate::scene::{sh, Anchor, Gaussian, SceneModel, Vec3};

/// Default centroids per group. See the README for why this is below the
/// 2^16 two-byte index range.
pub const DEFAULT_CODEBOOK_SIZE: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VqError {
    #[error("vectors must have at least one dimension")]
    ZeroDimension,
    #[error("{len} values do not divide into vectors of dimension {dim}")]
    Shape { len: usize, dim: usize },
    #[error("k-means needs at least one vector and one centroid")]
    Empty,
    #[error("codebook for {group:?} has dimension {found}, expected {expected}")]
    GroupDimension { group: Group, expected: usize, found: usize },
    #[error("scene and codebooks disagree on SH degree")]
    DegreeMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// DC colour coefficients.
    Dc,
    /// Higher-order SH coefficients.
    Rest,
    /// Log scales.
    Scale,
    /// Unit quaternions with non-negative real part.
    Rotation,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Dc, Group::Rest, Group::Scale, Group::Rotation];

    pub fn dim(self, sh_degree: usize) -> usize {
        match self {
            Group::Dc => 3,
            Group::Rest => 3 * (sh::coeff_count(sh_degree) - 1),
            Group::Scale => 3,
            Group::Rotation => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Dc => "color_dc",
            Group::Rest => "sh_rest",
            Group::Scale => "scale",
            Group::Rotation => "rotation",
        }
    }

    /// Groups stored for a model of the given degree (no rest group at degree 0).
    pub fn present(sh_degree: usize) -> Vec<Group> {
        Self::ALL.into_iter().filter(|g| g.dim(sh_degree) > 0).collect()
    }

    fn extract(self, g: &Gaussian, out: &mut Vec<f64>) {
        match self {
            Group::Dc => out.extend_from_slice(&g.sh[0]),
            Group::Rest => g.sh[1..].iter().for_each(|c| out.extend_from_slice(c)),
            Group::Scale => out.extend_from_slice(g.log_scale.as_slice()),
            Group::Rotation => out.extend_from_slice(&canonical_rotation(g)),
        }
    }

    fn write(self, g: &mut Gaussian, v: &[f64]) {
        match self {
            Group::Dc => g.sh[0].copy_from_slice(v),
            Group::Rest => {
                for (k, c) in g.sh[1..].iter_mut().enumerate() {
                    c.copy_from_slice(&v[3 * k..3 * k + 3]);
                }
            }
            Group::Scale => g.log_scale = Vec3::from_column_slice(v),
            Group::Rotation => g.rotation = [v[0], v[1], v[2], v[3]],
        }
    }
}

/// `q` and `-q` are the same rotation; pick the one with `w >= 0`.
fn canonical_rotation(g: &Gaussian) -> [f64; 4] {
    let q = g.unit_rotation();
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub group: Group,
    pub dim: usize,
    /// Row-major `K × dim`, every value exactly representable as `f32`.
    pub centroids: Vec<f64>,
    pub indices: Vec<u32>,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    pub books: Vec<Codebook>,
}

impl CodebookSet {
    pub fn get(&self, group: Group) -> Option<&Codebook> {
        self.books.iter().find(|b| b.group == group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizeConfig {
    pub dc: usize,
    pub rest: usize,
    pub scale: usize,
    pub rotation: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl QuantizeConfig {
    pub fn uniform(k: usize, seed: u64) -> Self {
        Self {
            dc: k,
            rest: k,
            scale: k,
            rotation: k,
            max_iters: DEFAULT_MAX_ITERS,
            seed,
        }
    }

    pub fn size(&self, group: Group) -> usize {
        match group {
            Group::Dc => self.dc,
            Group::Rest => self.rest,
            Group::Scale => self.scale,
            Group::Rotation => self.rotation,
        }
    }
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        Self::uniform(DEFAULT_CODEBOOK_SIZE, 0)
    }
}

/// A quantised model: raw positions and opacities plus codebooks. All
/// stored values are `f32`-representable so the in-memory model equals
/// what a compact file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub sh_degree: usize,
    pub positions: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub anchors: Vec<Option<Anchor>>,
    pub mesh: Option<TetraMesh>,
    pub codebooks: CodebookSet,
}

impl QuantizedModel {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// The scene with every quantised attribute replaced by its centroid.
    pub fn reconstruct(&self) -> SceneModel {
        let coeffs = sh::coeff_count(self.sh_degree);
        let mut gaussians: Vec<Gaussian> = (0..self.len())
            .map(|i| Gaussian {
                position: self.positions[i],
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: Vec3::zeros(),
                opacity_logit: self.opacity_logits[i],
                sh: vec![[0.0; 3]; coeffs],
                anchor: self.anchors[i],
            })
            .collect();
        for book in &self.codebooks.books {
            for (g, &idx) in gaussians.iter_mut().zip(&book.indices) {
                book.group.write(g, book.centroid(idx as usize));
            }
        }
        SceneModel {
            gaussians,
            mesh: self.mesh.clone(),
            sh_degree: self.sh_degree,
        }
    }
}

fn group_vectors(scene: &SceneModel, group: Group) -> Vec<f64> {
    let mut data = Vec::with_capacity(scene.len() * group.dim(scene.sh_degree));
    for g in &scene.gaussians {
        group.extract(g, &mut data);
    }
    data
}

fn raw_parts(scene: &SceneModel) -> (Vec<Vec3>, Vec<f64>, Vec<Option<Anchor>>) {
    let positions = scene.gaussians.iter().map(|g| g.position.map(round_f32)).collect();
    let opacity = scene.gaussians.iter().map(|g| round_f32(g.opacity_logit)).collect();
    let anchors = scene
        .gaussians
        .iter()
        .map(|g| {
            g.anchor.map(|a| Anchor {
                face: a.face,
                logits: a.logits.map(round_f32),
            })
        })
        .collect();
    (positions, opacity, anchors)
}

/// Learns one codebook per attribute group with k-means and encodes the scene.
pub fn quantize_scene(scene: &SceneModel, config: &QuantizeConfig) -> Result<QuantizedModel, VqError> {
    let mut books = Vec::new();
    for (gi, group) in Group::present(scene.sh_degree).into_iter().enumerate() {
        let dim = group.dim(scene.sh_degree);
        if scene.is_empty() {
            books.push(Codebook {
                group,
                dim,
                centroids: Vec::new(),
                indices: Vec::new(),
            });
            continue;
        }
        let data = group_vectors(scene, group);
        let seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(gi as u64);
        let km = kmeans(&data, dim, config.size(group).max(1), config.max_iters, seed)?;
        let mut centroids: Vec<f64> = km.centroids.iter().map(|&v| round_f32(v)).collect();
        if group == Group::Rotation {
            for c in centroids.chunks_exact_mut(4) {
                if c.iter().all(|&v| v == 0.0) {
                    c[0] = 1.0;
                }
            }
        }
        // Rounding moved the centroids; re-assign against the stored values.
        let (indices, _) = assign(&data, dim, &centroids);
        books.push(Codebook {
            group,
            dim,
            centroids,
            indices,
        });
    }
    let (positions, opacity_logits, anchors) = raw_parts(scene);
    Ok(QuantizedModel {
        sh_degree: scene.sh_degree,
        positions,
        opacity_logits,
        anchors,
        mesh: scene.mesh.clone(),
        codebooks: CodebookSet { books },
    })
}

/// Encodes a scene against existing codebooks (nearest centroid per group).
pub fn encode_with(scene: &SceneModel, codebooks: &CodebookSet) -> Result<QuantizedModel, VqError> {
    let groups = Group::present(scene.sh_degree);
    if codebooks.books.len() != groups.len() {
        return Err(VqError::DegreeMismatch);
    }
    let mut books = Vec::new();
    for (group, book) in groups.into_iter().zip(&codebooks.books) {
        let dim = group.dim(scene.sh_degree);
        if book.group != group || book.dim != dim {
            return Err(VqError::GroupDimension {
                group,
                expected: dim,
                found: book.dim,
            });
        }
        let (indices, _) = assign(&group_vectors(scene, group), dim, &book.centroids);
        books.push(Codebook {
            indices,
            ..book.clone()
        });
    }
    let (positions, opacity_logits, anchors) = raw_parts(scene);
    Ok(QuantizedModel {
        sh_degree: scene.sh_degree,
        positions,
        opacity_logits,
        anchors,
        mesh: scene.mesh.clone(),
        codebooks: CodebookSet { books },
    })
}
