//! The compact binary model format. `docs/compact-format.md` is the
//! normative description; the size functions here mirror it.

use std::path::Path;

use thiserror::Error;

use crate::mesh::TetraMesh;
use crate::scene::sh::{self, MAX_SH_DEGREE};
use crate::scene::{Anchor, Gaussian, SceneModel, Vec3};
use crate::vq::{Codebook, CodebookSet, Group, QuantizedModel};

pub const MAGIC: [u8; 4] = *b"EA3D";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

pub const FLAG_QUANTIZED: u8 = 1;
pub const FLAG_ANCHORED: u8 = 2;
pub const FLAG_WIDE_INDICES: u8 = 4;
pub const FLAG_F64: u8 = 8;
const KNOWN_FLAGS: u8 = FLAG_QUANTIZED | FLAG_ANCHORED | FLAG_WIDE_INDICES | FLAG_F64;

/// Largest Gaussian count accepted before any allocation.
pub const MAX_COUNT: u64 = 1 << 36;
const NO_FACE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompactError {
    #[error("not a compact model (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown or inconsistent flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("declared length {declared} does not match actual {actual}")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("checksum mismatch")]
    Checksum,
    #[error("{what}: index {index} out of range (limit {limit})")]
    IndexOutOfRange { what: &'static str, index: u64, limit: u64 },
    #[error("codebook for {group} has dimension {found}, expected {expected}")]
    GroupDimension { group: &'static str, expected: u32, found: u32 },
    #[error("non-zero padding byte at offset {0}")]
    Padding(u64),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn bytes(self) -> u64 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompactModel {
    Raw(SceneModel),
    Quantized(QuantizedModel),
}

impl CompactModel {
    /// The renderable scene (centroid reconstruction for quantised models).
    pub fn to_scene(&self) -> SceneModel {
        match self {
            CompactModel::Raw(s) => s.clone(),
            CompactModel::Quantized(q) => q.reconstruct(),
        }
    }
}

fn align8(n: u64) -> u64 {
    n.div_ceil(8) * 8
}

/// Mesh dimensions that enter the byte count of an anchored model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshShape {
    pub vertices: u64,
    pub tetrahedra: u64,
    pub colors: bool,
}

impl MeshShape {
    pub fn of(mesh: &TetraMesh) -> Self {
        Self {
            vertices: mesh.vertices.len() as u64,
            tetrahedra: mesh.tetrahedra.len() as u64,
            colors: mesh.vertex_colors.is_some(),
        }
    }
}

fn anchor_bytes(n: u64, mesh: Option<MeshShape>, fb: u64) -> u64 {
    match mesh {
        None => 0,
        Some(m) => {
            let colors = if m.colors { 24 * m.vertices } else { 0 };
            24 + 24 * m.vertices + colors + align8(16 * m.tetrahedra) + align8(4 * n) + align8(3 * fb * n)
        }
    }
}

/// Exact file size of a raw model.
pub fn raw_size(n: u64, sh_degree: usize, precision: Precision, mesh: Option<MeshShape>) -> u64 {
    let fb = precision.bytes();
    let rest = 3 * (sh::coeff_count(sh_degree) as u64 - 1);
    let sections = [3, 1, 3, rest, 3, 4];
    HEADER_LEN as u64 + sections.iter().map(|&k| align8(k * fb * n)).sum::<u64>() + anchor_bytes(n, mesh, fb)
}

/// Exact file size of a quantised model with the given codebook sizes
/// (one per present group, in storage order).
pub fn quantized_size(n: u64, sh_degree: usize, codebook_sizes: &[u64], mesh: Option<MeshShape>) -> u64 {
    let wide = codebook_sizes.iter().any(|&k| k > 65536);
    let ib = if wide { 4 } else { 2 };
    let mut total = HEADER_LEN as u64 + align8(12 * n) + align8(4 * n);
    for (group, &k) in Group::present(sh_degree).iter().zip(codebook_sizes) {
        let d = group.dim(sh_degree) as u64;
        total += 8 + align8(4 * k * d) + align8(ib * n);
    }
    total + anchor_bytes(n, mesh, 4)
}

// ---------------------------------------------------------------------------
// Writing

struct Writer {
    buf: Vec<u8>,
    precision: Precision,
}

impl Writer {
    fn float(&mut self, v: f64) {
        match self.precision {
            Precision::F32 => self.buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => self.buf.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn pad(&mut self) {
        while self.buf.len() % 8 != 0 {
            self.buf.push(0);
        }
    }
}

fn header(n: usize, sh_degree: usize, flags: u8) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(&MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&(n as u64).to_le_bytes());
    h.push(sh_degree as u8);
    h.push(flags);
    h.extend_from_slice(&[0, 0]);
    h.extend_from_slice(&[0; 4]); // checksum, filled in by `finish`
    h.extend_from_slice(&[0; 8]); // payload length
    h
}

fn finish(mut buf: Vec<u8>) -> Vec<u8> {
    let payload = (buf.len() - HEADER_LEN) as u64;
    buf[24..32].copy_from_slice(&payload.to_le_bytes());
    let crc = checksum(&buf);
    buf[20..24].copy_from_slice(&crc.to_le_bytes());
    buf
}

/// CRC32 over the whole file with the checksum field itself skipped.
fn checksum(buf: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&buf[..20]);
    h.update(&buf[24..]);
    h.finalize()
}

fn write_anchor_blocks(w: &mut Writer, mesh: &TetraMesh, anchors: impl Iterator<Item = Option<Anchor>> + Clone) {
    w.u64(mesh.vertices.len() as u64);
    w.u64(mesh.tetrahedra.len() as u64);
    w.u64(mesh.vertex_colors.is_some() as u64);
    for v in &mesh.vertices {
        v.iter().for_each(|&x| w.f64(x));
    }
    if let Some(colors) = &mesh.vertex_colors {
        colors.iter().flatten().for_each(|&x| w.f64(x));
    }
    for t in &mesh.tetrahedra {
        t.iter().for_each(|&i| w.u32(i as u32));
    }
    w.pad();
    for a in anchors.clone() {
        w.u32(a.map_or(NO_FACE, |a| a.face as u32));
    }
    w.pad();
    for a in anchors {
        let l = a.map_or(Vec3::zeros(), |a| a.logits);
        l.iter().for_each(|&x| w.float(x));
    }
    w.pad();
}

pub fn encode_raw(scene: &SceneModel, precision: Precision) -> Vec<u8> {
    let mut flags = if precision == Precision::F64 { FLAG_F64 } else { 0 };
    if scene.mesh.is_some() {
        flags |= FLAG_ANCHORED;
    }
    let mut w = Writer {
        buf: header(scene.len(), scene.sh_degree, flags),
        precision,
    };
    let gs = &scene.gaussians;
    let section = |w: &mut Writer, f: &dyn Fn(&Gaussian, &mut Writer)| {
        gs.iter().for_each(|g| f(g, w));
        w.pad();
    };
    section(&mut w, &|g, w| g.position.iter().for_each(|&x| w.float(x)));
    section(&mut w, &|g, w| w.float(g.opacity_logit));
    section(&mut w, &|g, w| g.sh[0].iter().for_each(|&x| w.float(x)));
    section(&mut w, &|g, w| g.sh[1..].iter().flatten().for_each(|&x| w.float(x)));
    section(&mut w, &|g, w| g.log_scale.iter().for_each(|&x| w.float(x)));
    section(&mut w, &|g, w| g.rotation.iter().for_each(|&x| w.float(x)));
    if let Some(mesh) = &scene.mesh {
        write_anchor_blocks(&mut w, mesh, gs.iter().map(|g| g.anchor));
    }
    finish(w.buf)
}

pub fn encode_quantized(model: &QuantizedModel) -> Vec<u8> {
    let wide = model.codebooks.books.iter().any(|b| b.len() > 65536);
    let mut flags = FLAG_QUANTIZED;
    if wide {
        flags |= FLAG_WIDE_INDICES;
    }
    if model.mesh.is_some() {
        flags |= FLAG_ANCHORED;
    }
    let mut w = Writer {
        buf: header(model.len(), model.sh_degree, flags),
        precision: Precision::F32,
    };
    model.positions.iter().flat_map(|p| p.iter()).for_each(|&x| w.float(x));
    w.pad();
    model.opacity_logits.iter().for_each(|&x| w.float(x));
    w.pad();
    for book in &model.codebooks.books {
        w.u32(book.len() as u32);
        w.u32(book.dim as u32);
        book.centroids.iter().for_each(|&x| w.float(x));
        w.pad();
        for &i in &book.indices {
            if wide {
                w.u32(i);
            } else {
                w.buf.extend_from_slice(&(i as u16).to_le_bytes());
            }
        }
        w.pad();
    }
    if let Some(mesh) = &model.mesh {
        write_anchor_blocks(&mut w, mesh, model.anchors.iter().copied());
    }
    finish(w.buf)
}

pub fn encode(model: &CompactModel, precision: Precision) -> Vec<u8> {
    match model {
        CompactModel::Raw(s) => encode_raw(s, precision),
        CompactModel::Quantized(q) => encode_quantized(q),
    }
}

// ---------------------------------------------------------------------------
// Reading

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    precision: Precision,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: u64) -> Result<&'a [u8], CompactError> {
        let available = (self.buf.len() - self.pos) as u64;
        if n > available {
            return Err(CompactError::Truncated {
                needed: self.pos as u64 + n,
                available: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(s)
    }

    /// Fails before allocating if `count` items of `size` bytes cannot fit.
    fn ensure(&self, count: u64, size: u64) -> Result<(), CompactError> {
        let need = count.checked_mul(size).unwrap_or(u64::MAX);
        let available = (self.buf.len() - self.pos) as u64;
        if need > available {
            return Err(CompactError::Truncated {
                needed: (self.pos as u64).saturating_add(need),
                available: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16, CompactError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CompactError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CompactError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CompactError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn float(&mut self) -> Result<f64, CompactError> {
        match self.precision {
            Precision::F32 => Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64),
            Precision::F64 => self.f64(),
        }
    }

    fn floats(&mut self, n: u64) -> Result<Vec<f64>, CompactError> {
        self.ensure(n, self.precision.bytes())?;
        let v = (0..n).map(|_| self.float()).collect::<Result<_, _>>()?;
        self.pad()?;
        Ok(v)
    }

    fn pad(&mut self) -> Result<(), CompactError> {
        while self.pos % 8 != 0 {
            let at = self.pos as u64;
            if self.take(1)?[0] != 0 {
                return Err(CompactError::Padding(at));
            }
        }
        Ok(())
    }
}

struct Header {
    count: u64,
    sh_degree: usize,
    flags: u8,
}

fn read_header(bytes: &[u8]) -> Result<Header, CompactError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(CompactError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CompactError::Truncated {
            needed: HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CompactError::UnsupportedVersion(version));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let sh_degree = bytes[16] as usize;
    let flags = bytes[17];
    let quantized = flags & FLAG_QUANTIZED != 0;
    if flags & !KNOWN_FLAGS != 0 || (quantized && flags & FLAG_F64 != 0) || (!quantized && flags & FLAG_WIDE_INDICES != 0) {
        return Err(CompactError::BadFlags(flags));
    }
    if bytes[18] != 0 || bytes[19] != 0 {
        return Err(CompactError::InvalidHeader("reserved bytes are not zero".into()));
    }
    if sh_degree > MAX_SH_DEGREE {
        return Err(CompactError::InvalidHeader(format!("SH degree {sh_degree} exceeds {MAX_SH_DEGREE}")));
    }
    let declared = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if declared > actual {
        return Err(CompactError::Truncated {
            needed: declared + HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    if declared != actual {
        return Err(CompactError::LengthMismatch { declared, actual });
    }
    let stored = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if stored != checksum(bytes) {
        return Err(CompactError::Checksum);
    }
    // Every Gaussian needs at least 16 bytes (position and opacity).
    if count > MAX_COUNT || count.saturating_mul(16) > actual {
        return Err(CompactError::InvalidHeader(format!("gaussian count {count} cannot fit in {actual} payload bytes")));
    }
    Ok(Header { count, sh_degree, flags })
}

fn read_anchor_blocks(r: &mut Reader, n: u64) -> Result<(TetraMesh, Vec<Option<Anchor>>), CompactError> {
    let nv = r.u64()?;
    let nt = r.u64()?;
    let has_colors = r.u64()?;
    if has_colors > 1 {
        return Err(CompactError::InvalidHeader("mesh colour flag must be 0 or 1".into()));
    }
    r.ensure(nv, 24)?;
    let mut vertices = Vec::with_capacity(nv as usize);
    for _ in 0..nv {
        vertices.push(Vec3::new(r.f64()?, r.f64()?, r.f64()?));
    }
    let colors = if has_colors == 1 {
        r.ensure(nv, 24)?;
        let mut c = Vec::with_capacity(nv as usize);
        for _ in 0..nv {
            c.push([r.f64()?, r.f64()?, r.f64()?]);
        }
        Some(c)
    } else {
        None
    };
    r.ensure(nt, 16)?;
    let mut tets = Vec::with_capacity(nt as usize);
    for _ in 0..nt {
        let mut t = [0usize; 4];
        for v in t.iter_mut() {
            let i = r.u32()?;
            if i as u64 >= nv {
                return Err(CompactError::IndexOutOfRange {
                    what: "tetrahedron vertex",
                    index: i as u64,
                    limit: nv,
                });
            }
            *v = i as usize;
        }
        tets.push(t);
    }
    r.pad()?;
    let mesh = TetraMesh::from_parts(vertices, colors, tets);
    r.ensure(n, 4)?;
    let faces: Vec<u32> = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
    r.pad()?;
    let logits = r.floats(3 * n)?;
    let mut anchors = Vec::with_capacity(n as usize);
    for (i, &f) in faces.iter().enumerate() {
        if f == NO_FACE {
            anchors.push(None);
            continue;
        }
        if f as usize >= mesh.faces.len() {
            return Err(CompactError::IndexOutOfRange {
                what: "anchor face",
                index: f as u64,
                limit: mesh.faces.len() as u64,
            });
        }
        anchors.push(Some(Anchor {
            face: f as usize,
            logits: Vec3::new(logits[3 * i], logits[3 * i + 1], logits[3 * i + 2]),
        }));
    }
    Ok((mesh, anchors))
}

pub fn decode(bytes: &[u8]) -> Result<CompactModel, CompactError> {
    let h = read_header(bytes)?;
    let n = h.count;
    let precision = if h.flags & FLAG_F64 != 0 { Precision::F64 } else { Precision::F32 };
    let mut r = Reader {
        buf: bytes,
        pos: HEADER_LEN,
        precision,
    };
    let positions = r.floats(3 * n)?;
    let opacity = r.floats(n)?;
    let coeffs = sh::coeff_count(h.sh_degree);
    let model = if h.flags & FLAG_QUANTIZED == 0 {
        let dc = r.floats(3 * n)?;
        let rest = r.floats(3 * (coeffs as u64 - 1) * n)?;
        let scale = r.floats(3 * n)?;
        let rot = r.floats(4 * n)?;
        let rc = 3 * (coeffs - 1);
        let gaussians = (0..n as usize)
            .map(|i| {
                let mut shv = vec![[dc[3 * i], dc[3 * i + 1], dc[3 * i + 2]]];
                for k in 0..coeffs - 1 {
                    let b = rc * i + 3 * k;
                    shv.push([rest[b], rest[b + 1], rest[b + 2]]);
                }
                Gaussian {
                    position: Vec3::new(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]),
                    rotation: [rot[4 * i], rot[4 * i + 1], rot[4 * i + 2], rot[4 * i + 3]],
                    log_scale: Vec3::new(scale[3 * i], scale[3 * i + 1], scale[3 * i + 2]),
                    opacity_logit: opacity[i],
                    sh: shv,
                    anchor: None,
                }
            })
            .collect();
        let mut scene = SceneModel {
            gaussians,
            mesh: None,
            sh_degree: h.sh_degree,
        };
        if h.flags & FLAG_ANCHORED != 0 {
            let (mesh, anchors) = read_anchor_blocks(&mut r, n)?;
            for (g, a) in scene.gaussians.iter_mut().zip(anchors) {
                g.anchor = a;
            }
            scene.mesh = Some(mesh);
        }
        CompactModel::Raw(scene)
    } else {
        let wide = h.flags & FLAG_WIDE_INDICES != 0;
        let mut books = Vec::new();
        for group in Group::present(h.sh_degree) {
            let k = r.u32()? as u64;
            let d = r.u32()?;
            let expected = group.dim(h.sh_degree) as u32;
            if d != expected {
                return Err(CompactError::GroupDimension {
                    group: group.name(),
                    expected,
                    found: d,
                });
            }
            if n > 0 && k == 0 {
                return Err(CompactError::InvalidHeader(format!("empty codebook for {}", group.name())));
            }
            if !wide && k > 65536 {
                return Err(CompactError::InvalidHeader(format!("codebook of {k} entries needs wide indices")));
            }
            let centroids = r.floats(k * d as u64)?;
            r.ensure(n, if wide { 4 } else { 2 })?;
            let mut indices = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let i = if wide { r.u32()? } else { r.u16()? as u32 };
                if i as u64 >= k {
                    return Err(CompactError::IndexOutOfRange {
                        what: group.name(),
                        index: i as u64,
                        limit: k,
                    });
                }
                indices.push(i);
            }
            r.pad()?;
            books.push(Codebook {
                group,
                dim: d as usize,
                centroids,
                indices,
            });
        }
        let (mesh, anchors) = if h.flags & FLAG_ANCHORED != 0 {
            let (m, a) = read_anchor_blocks(&mut r, n)?;
            (Some(m), a)
        } else {
            (None, vec![None; n as usize])
        };
        CompactModel::Quantized(QuantizedModel {
            sh_degree: h.sh_degree,
            positions: positions.chunks_exact(3).map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            opacity_logits: opacity,
            anchors,
            mesh,
            codebooks: CodebookSet { books },
        })
    };
    if r.pos != bytes.len() {
        return Err(CompactError::LengthMismatch {
            declared: (r.pos - HEADER_LEN) as u64,
            actual: (bytes.len() - HEADER_LEN) as u64,
        });
    }
    Ok(model)
}

pub fn save_compact(path: &Path, model: &CompactModel, precision: Precision) -> Result<u64, CompactError> {
    let bytes = encode(model, precision);
    std::fs::write(path, &bytes).map_err(|e| CompactError::Io(format!("{}: {e}", path.display())))?;
    Ok(bytes.len() as u64)
}

pub fn load_compact(path: &Path) -> Result<CompactModel, CompactError> {
    let bytes = std::fs::read(path).map_err(|e| CompactError::Io(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
