//! Procedural closed-loop fixtures: a textured primitive made of known
//! Gaussians, ground-truth renders from cameras around it, and a matching
//! COLMAP bundle with a sparse point cloud.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::image::ImageF;
use crate::io::colmap::{self, rotation_to_qvec, CameraModel, ColmapCamera, ColmapImage, ColmapPoint, SfmBundle};
use crate::io::compact::{self, CompactModel, Precision};
use crate::io::png;
use crate::raster::{rasterize, RasterError};
use crate::scene::{Camera, Gaussian, Mat3, SceneError, SceneModel, Vec3};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("writing {path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Cube,
    Sphere,
    Plane,
}

impl std::str::FromStr for Shape {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cube" => Ok(Shape::Cube),
            "sphere" => Ok(Shape::Sphere),
            "plane" => Ok(Shape::Plane),
            other => Err(SynthError::Config(format!("unknown shape '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub shapes: Vec<Shape>,
    pub views: usize,
    pub resolution: u32,
    pub seed: u64,
    /// Gaussians per unit length along each surface direction.
    pub density: f64,
    pub sparse_points: usize,
    pub camera_distance: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shapes: vec![Shape::Cube],
            views: 20,
            resolution: 128,
            seed: 0,
            density: 12.0,
            sparse_points: 400,
            camera_distance: 4.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub ground_truth: SceneModel,
    pub cameras: Vec<Camera>,
    pub names: Vec<String>,
    /// Linear-light renders, one per camera.
    pub images: Vec<ImageF>,
    pub bundle: SfmBundle,
}

/// One textured surface element.
struct Patch {
    center: Vec3,
    /// Columns: tangent u, tangent v, normal.
    frame: Mat3,
    size: f64,
    rgb: [f64; 3],
}

const PALETTE: [[f64; 3]; 6] = [
    [0.80, 0.25, 0.20],
    [0.20, 0.55, 0.80],
    [0.85, 0.75, 0.20],
    [0.30, 0.70, 0.35],
    [0.65, 0.35, 0.75],
    [0.90, 0.55, 0.25],
];

/// Checkerboard with a smooth shading ramp, in linear light.
fn texture(face: usize, u: f64, v: f64) -> [f64; 3] {
    let base = PALETTE[face % PALETTE.len()];
    let checker = ((u * 4.0).floor() as i64 + (v * 4.0).floor() as i64).rem_euclid(2) as f64;
    let shade = 0.45 + 0.35 * checker + 0.2 * u;
    base.map(|c| (c * shade).clamp(0.0, 1.0))
}

fn frame_from(u: Vec3, v: Vec3) -> Mat3 {
    let n = u.cross(&v).normalize();
    Mat3::from_columns(&[u.normalize(), v.normalize(), n])
}

fn surface_patches(shape: Shape, density: f64, offset: usize) -> Vec<Patch> {
    let mut out = Vec::new();
    match shape {
        Shape::Cube => {
            let g = (2.0 * density).round().max(1.0) as usize;
            let step = 2.0 / g as f64;
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let face = offset + axis * 2 + (sign > 0.0) as usize;
                    let mut n = Vec3::zeros();
                    n[axis] = sign;
                    let mut u = Vec3::zeros();
                    u[(axis + 1) % 3] = 1.0;
                    let v = n.cross(&u);
                    for i in 0..g {
                        for j in 0..g {
                            let (a, b) = ((i as f64 + 0.5) * step - 1.0, (j as f64 + 0.5) * step - 1.0);
                            out.push(Patch {
                                center: n + u * a + v * b,
                                frame: frame_from(u, v),
                                size: step,
                                rgb: texture(face, (a + 1.0) / 2.0, (b + 1.0) / 2.0),
                            });
                        }
                    }
                }
            }
        }
        Shape::Sphere => {
            let radius = 1.2;
            let area = 4.0 * std::f64::consts::PI * radius * radius;
            let count = (area * density * density).round().max(4.0) as usize;
            let step = (area / count as f64).sqrt();
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for i in 0..count {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let n = Vec3::new(r * phi.cos(), r * phi.sin(), z);
                let helper = if n.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
                let u = helper.cross(&n).normalize();
                let v = n.cross(&u);
                let lon = phi.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
                let lat = (z + 1.0) / 2.0;
                out.push(Patch {
                    center: n * radius,
                    frame: frame_from(u, v),
                    size: step,
                    rgb: texture(offset, lon * 2.0, lat),
                });
            }
        }
        Shape::Plane => {
            let half = 1.5;
            let g = (2.0 * half * density).round().max(1.0) as usize;
            let step = 2.0 * half / g as f64;
            for i in 0..g {
                for j in 0..g {
                    let (a, b) = ((i as f64 + 0.5) * step - half, (j as f64 + 0.5) * step - half);
                    out.push(Patch {
                        center: Vec3::new(a, b, -1.0),
                        frame: frame_from(Vec3::x(), Vec3::y()),
                        size: step,
                        rgb: texture(offset, (a + half) / (2.0 * half), (b + half) / (2.0 * half)),
                    });
                }
            }
        }
    }
    out
}

fn patch_gaussian(p: &Patch) -> Gaussian {
    let mut g = Gaussian::isotropic(p.center, p.size * 0.6, 0.95, p.rgb, 0);
    g.log_scale = Vec3::new((p.size * 0.6).ln(), (p.size * 0.6).ln(), (p.size * 0.05).ln());
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p.frame));
    g.rotation = [q.w, q.i, q.j, q.k];
    g
}

/// Cameras on a Fibonacci spiral at `distance`, looking at the origin.
pub fn orbit_cameras(views: usize, distance: f64, resolution: u32, seed: u64) -> Result<Vec<Camera>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spin: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..views)
        .map(|i| {
            let z = 0.8 * (1.0 - 2.0 * (i as f64 + 0.5) / views as f64);
            let r = (1.0 - z * z).sqrt();
            let phi = spin + golden * i as f64;
            let eye = Vec3::new(r * phi.cos(), r * phi.sin(), z) * distance;
            Ok(Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::z(),
                resolution as f64,
                resolution,
                resolution,
            )?)
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthScene, SynthError> {
    if config.resolution == 0 {
        return Err(SynthError::Config("resolution must be positive".into()));
    }
    if config.views < 2 {
        return Err(SynthError::Config("at least two views are required".into()));
    }
    if config.shapes.is_empty() {
        return Err(SynthError::Config("no shapes requested".into()));
    }
    if !(config.density > 0.0) {
        return Err(SynthError::Config("density must be positive".into()));
    }
    let mut patches = Vec::new();
    for (i, &shape) in config.shapes.iter().enumerate() {
        patches.extend(surface_patches(shape, config.density, i * 6));
    }
    let ground_truth = SceneModel {
        gaussians: patches.iter().map(patch_gaussian).collect(),
        mesh: None,
        sh_degree: 0,
    };
    let cameras = orbit_cameras(config.views, config.camera_distance, config.resolution, config.seed)?;
    let names: Vec<String> = (0..config.views).map(|i| format!("view_{i:03}.png")).collect();
    let images = cameras
        .iter()
        .map(|cam| rasterize(&ground_truth, cam).map(|o| o.image))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut points = Vec::with_capacity(config.sparse_points);
    for id in 0..config.sparse_points {
        let p = &patches[rng.random_range(0..patches.len())];
        let a: f64 = rng.random_range(-0.5..0.5);
        let b: f64 = rng.random_range(-0.5..0.5);
        let xyz = p.center + (p.frame.column(0) * a + p.frame.column(1) * b) * p.size;
        let normal = p.frame.column(2).into_owned();
        let mut track = Vec::new();
        for (ci, cam) in cameras.iter().enumerate() {
            let facing = normal.dot(&(cam.center() - xyz)) > 0.0;
            if let (true, Some((x, y))) = (facing, cam.project(&xyz)) {
                if x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64 {
                    track.push((ci as u32 + 1, 0));
                }
            }
        }
        let srgb = p.rgb.map(|c| (crate::image::linear_to_srgb(c) * 255.0).round() as u8);
        points.push(ColmapPoint {
            id: id as u64 + 1,
            xyz,
            rgb: srgb,
            error: 0.0,
            track,
        });
    }

    let mut images_map = BTreeMap::new();
    for (i, (cam, name)) in cameras.iter().zip(&names).enumerate() {
        let id = i as u32 + 1;
        let t = cam.translation;
        images_map.insert(
            id,
            ColmapImage {
                id,
                qvec: rotation_to_qvec(&cam.rotation),
                tvec: [t.x, t.y, t.z],
                camera_id: 1,
                name: name.clone(),
                points2d: Vec::new(),
            },
        );
    }
    let mut cameras_map = BTreeMap::new();
    let res = config.resolution;
    cameras_map.insert(
        1,
        ColmapCamera {
            id: 1,
            model: CameraModel::Pinhole,
            width: res,
            height: res,
            params: vec![res as f64, res as f64, res as f64 / 2.0, res as f64 / 2.0],
        },
    );
    Ok(SynthScene {
        ground_truth,
        cameras,
        names,
        images,
        bundle: SfmBundle {
            cameras: cameras_map,
            images: images_map,
            points,
        },
    })
}

/// Writes `sparse/*.txt`, `images/*.png` and `ground_truth.ea3d`.
pub fn write_fixture(scene: &SynthScene, dir: &Path) -> Result<(), SynthError> {
    let fail = |path: &Path, e: &dyn std::fmt::Display| SynthError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let sparse = dir.join("sparse");
    colmap::write_colmap_text(&scene.bundle, &sparse).map_err(|e| fail(&sparse, &e))?;
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| fail(&images, &e))?;
    for (img, name) in scene.images.iter().zip(&scene.names) {
        let path = images.join(name);
        png::write_png_linear(&path, img).map_err(|e| fail(&path, &e))?;
    }
    let gt = dir.join("ground_truth.ea3d");
    compact::save_compact(&gt, &CompactModel::Raw(scene.ground_truth.clone()), Precision::F64)
        .map_err(|e| fail(&gt, &e))?;
    Ok(())
}
