//! Optimizer-state sidecar written next to a compact checkpoint.
//!
//! Layout (little-endian): magic `EA3T`, version u32, iteration u64, Adam
//! step u64, row stride u64, row count u64, beta1/beta2/eps f64, first
//! moments f64, second moments f64, report length u64, report JSON, then a
//! CRC32 of everything before it.

use std::path::Path;

use super::{TrainError, TrainReport};
use crate::optim::Adam;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"EA3T";
const VERSION: u32 = 1;
/// Rows × stride sanity bound checked before allocating moments.
const MAX_VALUES: u64 = 1 << 34;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub iter: usize,
    pub adam: Adam,
    pub report: TrainReport,
}

pub fn encode_optimizer_state(state: &OptimizerState) -> Vec<u8> {
    let a = &state.adam;
    let report = serde_json::to_vec(&state.report).expect("report is serialisable");
    let mut out = Vec::with_capacity(64 + 16 * a.m.len() + report.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [state.iter as u64, a.step, a.stride as u64, a.len() as u64] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in [a.beta1, a.beta2, a.eps].iter().chain(&a.m).chain(&a.v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(report.len() as u64).to_le_bytes());
    out.extend_from_slice(&report);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn corrupt(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

pub fn decode_optimizer_state(bytes: &[u8]) -> Result<OptimizerState, TrainError> {
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad optimizer-state magic"));
    }
    if bytes.len() < 4 + 4 + 32 + 24 + 8 + 4 {
        return Err(corrupt("optimizer state truncated"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt("optimizer state checksum mismatch"));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8], TrainError> {
        let s = body.get(pos..pos + n).ok_or_else(|| corrupt("optimizer state truncated"))?;
        pos += n;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported optimizer-state version {version}")));
    }
    let mut u64s = [0u64; 4];
    for v in &mut u64s {
        *v = u64::from_le_bytes(take(8)?.try_into().unwrap());
    }
    let [iter, step, stride, rows] = u64s;
    let values = stride.checked_mul(rows).filter(|&v| v <= MAX_VALUES).ok_or_else(|| corrupt("implausible size"))?;
    if stride == 0 || (values * 16) as usize > body.len() {
        return Err(corrupt("declared moments exceed the file"));
    }
    let mut f64s = |n: usize| -> Result<Vec<f64>, TrainError> {
        let raw = take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let betas = f64s(3)?;
    let m = f64s(values as usize)?;
    let v = f64s(values as usize)?;
    let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let report: TrainReport =
        serde_json::from_slice(take(len)?).map_err(|e| corrupt(format!("report: {e}")))?;
    if pos != body.len() {
        return Err(corrupt("trailing bytes in optimizer state"));
    }
    Ok(OptimizerState {
        iter: iter as usize,
        adam: Adam {
            beta1: betas[0],
            beta2: betas[1],
            eps: betas[2],
            step,
            stride: stride as usize,
            m,
            v,
        },
        report,
    })
}

pub fn write_optimizer_state(path: &Path, state: &OptimizerState) -> Result<(), TrainError> {
    std::fs::write(path, encode_optimizer_state(state)).map_err(|e| corrupt(format!("{}: {e}", path.display())))
}

pub fn read_optimizer_state(path: &Path) -> Result<OptimizerState, TrainError> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    decode_optimizer_state(&bytes)
}
