//! Glue between the file formats and the training stages.

use std::path::Path;

use thiserror::Error;

use crate::image::srgb_to_linear;
use crate::io::colmap::{self, ColmapError, SfmBundle};
use crate::io::png::{self, PngError};
use crate::mesh::{init_gaussians_on_faces, MeshError, TetraMesh};
use crate::scene::{SceneModel, Vec3};
use crate::train::{TrainData, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Colmap(#[from] ColmapError),
    #[error(transparent)]
    Png(#[from] PngError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Tetrahedral mesh over the bundle's sparse points, coloured in linear light.
pub fn mesh_from_bundle(bundle: &SfmBundle) -> Result<TetraMesh, MeshError> {
    let points: Vec<Vec3> = bundle.point_positions();
    let colors: Vec<[f64; 3]> = bundle.point_colors().into_iter().map(|c| c.map(srgb_to_linear)).collect();
    TetraMesh::build(&points, Some(&colors))
}

/// Mesh plus `k` anchored Gaussians per face.
pub fn initial_scene(bundle: &SfmBundle, k: usize, sh_degree: usize) -> Result<SceneModel, MeshError> {
    init_gaussians_on_faces(&mesh_from_bundle(bundle)?, k, sh_degree)
}

/// Cameras and linearised images for every bundle image, in image-id order.
pub fn load_views(bundle: &SfmBundle, images_dir: &Path) -> Result<TrainData, PipelineError> {
    let mut cameras = Vec::with_capacity(bundle.images.len());
    let mut images = Vec::with_capacity(bundle.images.len());
    for im in bundle.images.values() {
        cameras.push(bundle.camera(im)?);
        images.push(png::read_png_linear(&images_dir.join(&im.name))?);
    }
    Ok(TrainData::new(cameras, images)?)
}

/// Reads a fixture laid out as `sparse/*.txt` plus `images/*.png`.
pub fn load_fixture(dir: &Path) -> Result<(SfmBundle, TrainData), PipelineError> {
    let bundle = colmap::parse_colmap_text(&dir.join("sparse"))?;
    let data = load_views(&bundle, &dir.join("images"))?;
    Ok((bundle, data))
}
