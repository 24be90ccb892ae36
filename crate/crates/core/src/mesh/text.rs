//! Plain-text mesh interchange:
//!
//! ```text
//! # optional comment lines
//! vertices <N>
//! <x> <y> <z> [<r> <g> <b>]     (N lines)
//! tetrahedra <M>
//! <a> <b> <c> <d>               (M lines, zero-based vertex indices)
//! ```
//! Faces and adjacency are rebuilt on load.

use std::fmt::Write as _;

use super::{MeshError, TetraMesh};
use crate::scene::Vec3;

pub fn write_mesh_text(mesh: &TetraMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# tetrasplat tetrahedral mesh");
    let _ = writeln!(out, "vertices {}", mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => {
                let _ = writeln!(out, "{} {} {} {} {} {}", v.x, v.y, v.z, c[i][0], c[i][1], c[i][2]);
            }
            None => {
                let _ = writeln!(out, "{} {} {}", v.x, v.y, v.z);
            }
        }
    }
    let _ = writeln!(out, "tetrahedra {}", mesh.tetrahedra.len());
    for t in &mesh.tetrahedra {
        let _ = writeln!(out, "{} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    out
}

pub fn read_mesh_text(text: &str) -> Result<TetraMesh, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let err = |line: usize, message: String| MeshError::Parse { line, message };
    let header = |entry: Option<(usize, &str)>, name: &str| -> Result<usize, MeshError> {
        let (no, l) = entry.ok_or_else(|| err(0, format!("missing '{name}' header")))?;
        let mut parts = l.split_whitespace();
        if parts.next() != Some(name) {
            return Err(err(no, format!("expected '{name}'")));
        }
        match (parts.next().and_then(|n| n.parse().ok()), parts.next()) {
            (Some(n), None) => Ok(n),
            _ => Err(err(no, format!("bad '{name}' count"))),
        }
    };

    let nv = header(lines.next(), "vertices")?;
    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    let mut colors: Vec<[f64; 3]> = Vec::new();
    for _ in 0..nv {
        let (no, l) = lines.next().ok_or_else(|| err(0, "truncated vertex list".into()))?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(no, e.to_string()))?;
        match vals.len() {
            3 => {}
            6 => colors.push([vals[3], vals[4], vals[5]]),
            n => return Err(err(no, format!("expected 3 or 6 values, found {n}"))),
        }
        vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    if !colors.is_empty() && colors.len() != nv {
        return Err(err(0, "colours given for some vertices only".into()));
    }

    let nt = header(lines.next(), "tetrahedra")?;
    let mut tetrahedra = Vec::with_capacity(nt.min(1 << 20));
    for _ in 0..nt {
        let (no, l) = lines.next().ok_or_else(|| err(0, "truncated tetrahedron list".into()))?;
        let vals: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(no, e.to_string()))?;
        if vals.len() != 4 || vals.iter().any(|&v| v >= nv) {
            return Err(err(no, "expected 4 valid vertex indices".into()));
        }
        tetrahedra.push([vals[0], vals[1], vals[2], vals[3]]);
    }
    if let Some((no, _)) = lines.next() {
        return Err(err(no, "unexpected trailing content".into()));
    }
    let vertex_colors = if colors.is_empty() { None } else { Some(colors) };
    Ok(TetraMesh::from_parts(vertices, vertex_colors, tetrahedra))
}
