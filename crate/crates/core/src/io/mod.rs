//! File formats: COLMAP text, PLY, PNG, the compact model container and
//! scalar sidecars.

pub mod colmap;
pub mod compact;
pub mod ply;
pub mod png;
pub mod sidecar;

pub use colmap::{parse_colmap_text, write_colmap_text, ColmapError, SfmBundle};
pub use compact::{load_compact, save_compact, CompactError, CompactModel, Precision};
pub use ply::{read_ply_gaussians, read_ply_points, write_ply_gaussians, write_ply_points, PlyError, PointCloud};
pub use png::{read_png, write_png, PngError};
pub use sidecar::ScalarTable;
