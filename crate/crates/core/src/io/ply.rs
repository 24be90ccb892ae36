//! PLY point clouds and 3DGS-layout Gaussian checkpoints.
//!
//! Reads ascii and binary little-endian files; writes binary little-endian.
//! Gaussian files use the common layout: `x y z nx ny nz f_dc_0..2
//! f_rest_* opacity scale_0..2 rot_0..3`, with `f_rest` stored channel-major.

use std::fmt::Write as _;

use thiserror::Error;

use crate::scene::sh;
use crate::scene::{Gaussian, SceneModel, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlyError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported PLY format '{0}'")]
    UnsupportedFormat(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("payload truncated: {0}")]
    Length(String),
    #[error("ascii body, line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Property {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyHeader {
    pub elements: Vec<Element>,
    ascii: bool,
    body_offset: usize,
}

/// Scalar vertex properties of a PLY file, one column per property.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTable {
    pub count: usize,
    pub names: Vec<String>,
    /// Row-major: `values[row * names.len() + col]`.
    pub values: Vec<f64>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize, PlyError> {
        self.column(name)
            .ok_or_else(|| PlyError::Schema(format!("missing vertex property '{name}'")))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.names.len() + col]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    /// Colors in `[0, 1]`.
    pub colors: Option<Vec<[f64; 3]>>,
}

/// Upper bound on declared element counts, checked before allocating.
const MAX_ELEMENTS: usize = 1 << 32;

pub fn parse_header(bytes: &[u8]) -> Result<PlyHeader, PlyError> {
    let end = find_header_end(bytes).ok_or_else(|| PlyError::Header("missing end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..end.0]).map_err(|_| PlyError::Header("header is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(PlyError::Header("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                })
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| PlyError::Header(format!("bad element count '{count}'")))?;
                if count > MAX_ELEMENTS {
                    return Err(PlyError::Header(format!("element count {count} exceeds limit")));
                }
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", c, i, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let count = ScalarType::parse(c).ok_or_else(|| PlyError::Header(format!("unknown type '{c}'")))?;
                let item = ScalarType::parse(i).ok_or_else(|| PlyError::Header(format!("unknown type '{i}'")))?;
                el.properties.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| PlyError::Header(format!("unknown type '{ty}'")))?;
                el.properties.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(PlyError::Header(format!("unrecognized line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| PlyError::Header("missing format line".into()))?;
    Ok(PlyHeader {
        elements,
        ascii: format == Format::Ascii,
        body_offset: end.1,
    })
}

/// `(end of header text, start of body)`.
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    const KEY: &[u8] = b"end_header";
    let mut i = 0;
    while i + KEY.len() <= bytes.len() {
        let at_line_start = i == 0 || bytes[i - 1] == b'\n';
        if at_line_start && &bytes[i..i + KEY.len()] == KEY {
            let mut j = i + KEY.len();
            if bytes.get(j) == Some(&b'\r') {
                j += 1;
            }
            return match bytes.get(j) {
                Some(b'\n') => Some((i, j + 1)),
                None => Some((i, j)),
                _ => None,
            };
        }
        i += 1;
    }
    None
}

/// Reads the scalar properties of the `vertex` element.
pub fn read_vertex_table(bytes: &[u8]) -> Result<VertexTable, PlyError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    if header.ascii {
        read_ascii(&header, body)
    } else {
        read_binary(&header, body)
    }
}

fn vertex_layout(header: &PlyHeader) -> Result<(usize, &Element), PlyError> {
    header
        .elements
        .iter()
        .enumerate()
        .find(|(_, e)| e.name == "vertex")
        .ok_or_else(|| PlyError::Schema("no vertex element".into()))
}

fn scalar_names(el: &Element) -> Vec<String> {
    el.properties
        .iter()
        .filter_map(|p| match p {
            Property::Scalar { name, .. } => Some(name.clone()),
            Property::List { .. } => None,
        })
        .collect()
}

fn read_binary(header: &PlyHeader, body: &[u8]) -> Result<VertexTable, PlyError> {
    let (vi, vertex) = vertex_layout(header)?;
    let mut pos = 0usize;
    let truncated = |what: &str| PlyError::Length(format!("{what} extends past end of file"));
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<usize, PlyError> {
        let start = *pos;
        let end = start.checked_add(n).filter(|&e| e <= body.len()).ok_or_else(|| truncated(what))?;
        *pos = end;
        Ok(start)
    };
    // Skip elements stored ahead of the vertices.
    for el in &header.elements[..vi] {
        for _ in 0..el.count {
            for p in &el.properties {
                match p {
                    Property::Scalar { ty, .. } => {
                        take(&mut pos, ty.size(), &el.name)?;
                    }
                    Property::List { count, item, .. } => {
                        let at = take(&mut pos, count.size(), &el.name)?;
                        let n = count.read(&body[at..]);
                        if !(n >= 0.0) {
                            return Err(PlyError::Schema(format!("negative list length in '{}'", el.name)));
                        }
                        take(&mut pos, n as usize * item.size(), &el.name)?;
                    }
                }
            }
        }
    }
    let names = scalar_names(vertex);
    let fixed = vertex.properties.iter().all(|p| matches!(p, Property::Scalar { .. }));
    if fixed {
        let stride: usize = vertex
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => ty.size(),
                Property::List { .. } => 0,
            })
            .sum();
        let need = stride.checked_mul(vertex.count).ok_or_else(|| truncated("vertex data"))?;
        if body.len() - pos < need {
            return Err(truncated("vertex data"));
        }
    }
    let mut values = Vec::with_capacity(if fixed { vertex.count * names.len() } else { 0 });
    for _ in 0..vertex.count {
        for p in &vertex.properties {
            match p {
                Property::Scalar { ty, .. } => {
                    let at = take(&mut pos, ty.size(), "vertex data")?;
                    values.push(ty.read(&body[at..]));
                }
                Property::List { count, item, .. } => {
                    let at = take(&mut pos, count.size(), "vertex data")?;
                    let n = count.read(&body[at..]);
                    if !(n >= 0.0) {
                        return Err(PlyError::Schema("negative list length in 'vertex'".into()));
                    }
                    take(&mut pos, n as usize * item.size(), "vertex data")?;
                }
            }
        }
    }
    Ok(VertexTable {
        count: vertex.count,
        names,
        values,
    })
}

fn read_ascii(header: &PlyHeader, body: &[u8]) -> Result<VertexTable, PlyError> {
    let (vi, vertex) = vertex_layout(header)?;
    let text = std::str::from_utf8(body).map_err(|_| PlyError::Parse {
        line: 0,
        message: "body is not UTF-8".into(),
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let skip: usize = header.elements[..vi].iter().map(|e| e.count).sum();
    for _ in 0..skip {
        lines.next().ok_or_else(|| PlyError::Length("fewer rows than declared".into()))?;
    }
    let names = scalar_names(vertex);
    let mut values = Vec::new();
    for _ in 0..vertex.count {
        let (no, line) = lines
            .next()
            .ok_or_else(|| PlyError::Length(format!("expected {} vertex rows", vertex.count)))?;
        let err = |message: String| PlyError::Parse { line: no + 1, message };
        let mut tok = line.split_whitespace();
        let mut next = |what: &str| -> Result<f64, PlyError> {
            let t = tok.next().ok_or_else(|| err(format!("missing {what}")))?;
            t.parse::<f64>().map_err(|_| err(format!("invalid number '{t}'")))
        };
        for p in &vertex.properties {
            match p {
                Property::Scalar { name, .. } => values.push(next(name)?),
                Property::List { name, .. } => {
                    let n = next(name)?;
                    if !(n >= 0.0) || n.fract() != 0.0 {
                        return Err(err(format!("bad list length for '{name}'")));
                    }
                    for _ in 0..n as usize {
                        next(name)?;
                    }
                }
            }
        }
        if let Some(extra) = tok.next() {
            return Err(err(format!("unexpected trailing value '{extra}'")));
        }
    }
    Ok(VertexTable {
        count: vertex.count,
        names,
        values,
    })
}

pub fn read_ply_points(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    let t = read_vertex_table(bytes)?;
    let (x, y, z) = (t.require("x")?, t.require("y")?, t.require("z")?);
    let positions = (0..t.count).map(|i| Vec3::new(t.get(i, x), t.get(i, y), t.get(i, z))).collect();
    let normals = match (t.column("nx"), t.column("ny"), t.column("nz")) {
        (Some(a), Some(b), Some(c)) => Some((0..t.count).map(|i| Vec3::new(t.get(i, a), t.get(i, b), t.get(i, c))).collect()),
        _ => None,
    };
    let colors = match (t.column("red"), t.column("green"), t.column("blue")) {
        (Some(r), Some(g), Some(b)) => {
            let max = match vertex_type(bytes, "red") {
                Some(ScalarType::F32) | Some(ScalarType::F64) => 1.0,
                Some(ScalarType::U16) => 65535.0,
                _ => 255.0,
            };
            Some(
                (0..t.count)
                    .map(|i| [t.get(i, r) / max, t.get(i, g) / max, t.get(i, b) / max])
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(PointCloud {
        positions,
        normals,
        colors,
    })
}

fn vertex_type(bytes: &[u8], name: &str) -> Option<ScalarType> {
    let header = parse_header(bytes).ok()?;
    let (_, v) = vertex_layout(&header).ok()?;
    v.properties.iter().find_map(|p| match p {
        Property::Scalar { name: n, ty } if n == name => Some(*ty),
        _ => None,
    })
}

/// SH degree implied by the number of `f_rest_*` properties.
pub fn degree_from_rest_count(rest: usize) -> Result<usize, PlyError> {
    (0..=sh::MAX_SH_DEGREE)
        .find(|&l| 3 * (sh::coeff_count(l) - 1) == rest)
        .ok_or_else(|| PlyError::Schema(format!("{rest} f_rest properties do not match any SH degree")))
}

pub fn read_ply_gaussians(bytes: &[u8]) -> Result<SceneModel, PlyError> {
    let t = read_vertex_table(bytes)?;
    let (x, y, z) = (t.require("x")?, t.require("y")?, t.require("z")?);
    let dc = [t.require("f_dc_0")?, t.require("f_dc_1")?, t.require("f_dc_2")?];
    let opacity = t.require("opacity")?;
    let scale = [t.require("scale_0")?, t.require("scale_1")?, t.require("scale_2")?];
    let rot = [t.require("rot_0")?, t.require("rot_1")?, t.require("rot_2")?, t.require("rot_3")?];
    let rest_count = t.names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let degree = degree_from_rest_count(rest_count)?;
    let per_channel = sh::coeff_count(degree) - 1;
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| t.require(&format!("f_rest_{i}")))
        .collect::<Result<_, _>>()?;
    let mut gaussians = Vec::with_capacity(t.count);
    for i in 0..t.count {
        let mut coeffs = vec![[0.0; 3]; per_channel + 1];
        coeffs[0] = dc.map(|c| t.get(i, c));
        for (c, channel) in rest.chunks(per_channel.max(1)).enumerate().take(3) {
            for (k, &col) in channel.iter().enumerate() {
                coeffs[k + 1][c] = t.get(i, col);
            }
        }
        gaussians.push(Gaussian {
            position: Vec3::new(t.get(i, x), t.get(i, y), t.get(i, z)),
            rotation: rot.map(|c| t.get(i, c)),
            log_scale: Vec3::new(t.get(i, scale[0]), t.get(i, scale[1]), t.get(i, scale[2])),
            opacity_logit: t.get(i, opacity),
            sh: coeffs,
            anchor: None,
        });
    }
    Ok(SceneModel {
        gaussians,
        mesh: None,
        sh_degree: degree,
    })
}

fn header_text(count: usize, props: &[String]) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(h, "element vertex {count}");
    for p in props {
        let _ = writeln!(h, "{p}");
    }
    h.push_str("end_header\n");
    h
}

/// Binary little-endian point cloud with optional 8-bit colors.
pub fn write_ply_points(cloud: &PointCloud) -> Vec<u8> {
    let mut props: Vec<String> = ["x", "y", "z"].iter().map(|n| format!("property float {n}")).collect();
    if cloud.normals.is_some() {
        props.extend(["nx", "ny", "nz"].iter().map(|n| format!("property float {n}")));
    }
    if cloud.colors.is_some() {
        props.extend(["red", "green", "blue"].iter().map(|n| format!("property uchar {n}")));
    }
    let mut out = header_text(cloud.positions.len(), &props).into_bytes();
    for (i, p) in cloud.positions.iter().enumerate() {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(n) = &cloud.normals {
            for v in n[i].iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        if let Some(c) = &cloud.colors {
            out.extend(c[i].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    out
}

/// Binary little-endian Gaussian checkpoint in the 3DGS property layout.
/// Values are stored as f32; anchors are dropped and the cached world
/// positions written instead.
pub fn write_ply_gaussians(scene: &SceneModel) -> Vec<u8> {
    let per_channel = sh::coeff_count(scene.sh_degree) - 1;
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * per_channel).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    let props: Vec<String> = names.iter().map(|n| format!("property float {n}")).collect();
    let mut out = header_text(scene.gaussians.len(), &props).into_bytes();
    let push = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for g in &scene.gaussians {
        for v in g.position.iter() {
            push(&mut out, *v);
        }
        for _ in 0..3 {
            push(&mut out, 0.0);
        }
        for c in 0..3 {
            push(&mut out, g.sh[0][c]);
        }
        for c in 0..3 {
            for k in 0..per_channel {
                push(&mut out, g.sh[k + 1][c]);
            }
        }
        push(&mut out, g.opacity_logit);
        for v in g.log_scale.iter() {
            push(&mut out, *v);
        }
        for v in g.rotation {
            push(&mut out, v);
        }
    }
    out
}
