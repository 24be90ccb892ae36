use serde::Serialize;

use super::{Group, QuantizedModel};
use crate::io::compact::{encode_quantized, encode_raw, Precision, HEADER_LEN};
use crate::scene::SceneModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Ok,
    /// Empty scene: the ratio is undefined.
    NoData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupBytes {
    pub group: &'static str,
    pub codebook_size: usize,
    pub dim: usize,
    /// Raw f32 attribute section.
    pub raw: u64,
    /// Codebook header, centroids and index array.
    pub quantized: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub status: ReportStatus,
    pub gaussians: usize,
    pub raw_bytes: u64,
    pub quantized_bytes: u64,
    /// `quantized_bytes / raw_bytes`, absent for an empty scene.
    pub ratio: Option<f64>,
    pub header_bytes: u64,
    /// Positions and opacities, stored unquantised in both files.
    pub shared_bytes: u64,
    pub groups: Vec<GroupBytes>,
}

fn align8(n: u64) -> u64 {
    n.div_ceil(8) * 8
}

/// Byte accounting of the f32 raw file against the quantised file.
pub fn compression_report(raw: &SceneModel, quantized: &QuantizedModel) -> CompressionReport {
    let raw_bytes = encode_raw(raw, Precision::F32).len() as u64;
    let quantized_bytes = encode_quantized(quantized).len() as u64;
    let n = quantized.len() as u64;
    let wide = quantized.codebooks.books.iter().any(|b| b.len() > 65536);
    let ib = if wide { 4 } else { 2 };
    let groups = Group::present(quantized.sh_degree)
        .into_iter()
        .map(|g| {
            let dim = g.dim(quantized.sh_degree);
            let k = quantized.codebooks.get(g).map_or(0, |b| b.len());
            GroupBytes {
                group: g.name(),
                codebook_size: k,
                dim,
                raw: align8(4 * dim as u64 * raw.len() as u64),
                quantized: 8 + align8(4 * (k * dim) as u64) + align8(ib * n),
            }
        })
        .collect();
    let status = if raw.is_empty() { ReportStatus::NoData } else { ReportStatus::Ok };
    CompressionReport {
        status,
        gaussians: raw.len(),
        raw_bytes,
        quantized_bytes,
        ratio: (status == ReportStatus::Ok).then(|| quantized_bytes as f64 / raw_bytes as f64),
        header_bytes: HEADER_LEN as u64,
        shared_bytes: align8(12 * n) + align8(4 * n),
        groups,
    }
}
