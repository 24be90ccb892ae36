//! COLMAP text export (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! Files written here start with an extra `# crc32: <8 hex digits>` comment
//! covering their data lines. Other readers skip it as a comment; this
//! reader verifies it when the first line carries it. Every file must be non-empty and end
//! with a newline, which catches most truncations of unchecked files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use thiserror::Error;

use crate::scene::{Camera, Mat3, SceneError, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColmapError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{file}:{line}: unsupported camera model {model}")]
    UnsupportedModel { file: &'static str, line: usize, model: String },
    #[error("{file}:{line}: {message}")]
    Parse { file: &'static str, line: usize, message: String },
    #[error("{file}: header declares {declared} entries, found {found}")]
    CountMismatch { file: &'static str, declared: usize, found: usize },
    #[error("{file}: checksum mismatch")]
    Checksum { file: &'static str },
    #[error("image {image} references missing camera {camera}")]
    MissingCamera { image: u32, camera: u32 },
    #[error(transparent)]
    Camera(#[from] SceneError),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
}

impl CameraModel {
    fn name(self) -> &'static str {
        match self {
            CameraModel::SimplePinhole => "SIMPLE_PINHOLE",
            CameraModel::Pinhole => "PINHOLE",
        }
    }

    fn param_count(self) -> usize {
        match self {
            CameraModel::SimplePinhole => 3,
            CameraModel::Pinhole => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub model: CameraModel,
    pub width: u32,
    pub height: u32,
    pub params: Vec<f64>,
}

impl ColmapCamera {
    /// `(fx, fy, cx, cy)`.
    pub fn intrinsics(&self) -> (f64, f64, f64, f64) {
        match self.model {
            CameraModel::SimplePinhole => (self.params[0], self.params[0], self.params[1], self.params[2]),
            CameraModel::Pinhole => (self.params[0], self.params[1], self.params[2], self.params[3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    /// `(x, y, point3D id or -1)`.
    pub points2d: Vec<(f64, f64, i64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapPoint {
    pub id: u64,
    pub xyz: Vec3,
    pub rgb: [u8; 3],
    pub error: f64,
    /// `(image id, point2D index)`.
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SfmBundle {
    pub cameras: BTreeMap<u32, ColmapCamera>,
    pub images: BTreeMap<u32, ColmapImage>,
    pub points: Vec<ColmapPoint>,
}

impl SfmBundle {
    /// Pinhole camera for an image, with the world-to-camera pose.
    pub fn camera(&self, image: &ColmapImage) -> Result<Camera, ColmapError> {
        let cam = self.cameras.get(&image.camera_id).ok_or(ColmapError::MissingCamera {
            image: image.id,
            camera: image.camera_id,
        })?;
        let (fx, fy, cx, cy) = cam.intrinsics();
        let [w, x, y, z] = image.qvec;
        let r: Mat3 = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner();
        let t = Vec3::new(image.tvec[0], image.tvec[1], image.tvec[2]);
        Ok(Camera::new(fx, fy, cx, cy, cam.width, cam.height, r, t)?)
    }

    pub fn point_positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.xyz).collect()
    }

    pub fn point_colors(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.rgb.map(|c| c as f64 / 255.0)).collect()
    }
}

/// Quaternion `(w, x, y, z)` of a rotation matrix.
pub fn rotation_to_qvec(r: &Mat3) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r));
    [q.w, q.i, q.j, q.k]
}

// ---------------------------------------------------------------------------
// Parsing

struct Lines<'a> {
    file: &'static str,
    /// `(1-based line number, text)` of every non-comment line.
    data: Vec<(usize, &'a str)>,
    declared: Option<usize>,
}

fn split_lines<'a>(file: &'static str, text: &'a str, count_prefix: &str) -> Result<Lines<'a>, ColmapError> {
    if text.is_empty() {
        return Err(ColmapError::Parse {
            file,
            line: 1,
            message: "empty file".into(),
        });
    }
    if !text.ends_with('\n') {
        return Err(ColmapError::Parse {
            file,
            line: text.lines().count(),
            message: "missing final newline (truncated file?)".into(),
        });
    }
    let mut data = Vec::new();
    let mut declared = None;
    let mut lines = text.lines().enumerate().peekable();
    let mut crc = None;
    if let Some(&(_, first)) = lines.peek() {
        if looks_like_checksum(first) {
            lines.next();
            crc = Some(parse_checksum_line(first).ok_or_else(|| ColmapError::Parse {
                file,
                line: 1,
                message: format!("damaged checksum line '{first}'"),
            })?);
        }
    }
    for (i, line) in lines {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix(count_prefix) {
                let n = rest.split(',').next().unwrap_or("").trim();
                declared = Some(n.parse().map_err(|_| ColmapError::Parse {
                    file,
                    line: i + 1,
                    message: format!("bad count '{n}'"),
                })?);
            }
            continue;
        }
        data.push((i + 1, line));
    }
    if let Some(expected) = crc {
        if data_checksum(data.iter().map(|(_, l)| *l)) != expected {
            return Err(ColmapError::Checksum { file });
        }
    }
    Ok(Lines { file, data, declared })
}

const CHECKSUM_PREFIX: &[u8; 9] = b"# crc32: ";

/// A first line close enough to the checksum prefix is treated as a checksum
/// line, so a few flipped bytes cannot turn it into an ignored comment. The
/// standard COLMAP header comments differ from the prefix in 6+ places.
fn looks_like_checksum(line: &str) -> bool {
    let b = line.as_bytes();
    let mismatches = (0..CHECKSUM_PREFIX.len()).filter(|&i| b.get(i) != Some(&CHECKSUM_PREFIX[i])).count();
    mismatches <= 4
}

fn parse_checksum_line(line: &str) -> Option<u32> {
    let hex = line.strip_prefix("# crc32: ")?;
    if hex.len() != 8 || !hex.bytes().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    u32::from_str_radix(hex, 16).ok()
}

fn data_checksum<'a>(lines: impl Iterator<Item = &'a str>) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    h.finalize()
}

fn check_count(lines: &Lines, found: usize) -> Result<(), ColmapError> {
    match lines.declared {
        Some(declared) if declared != found => Err(ColmapError::CountMismatch {
            file: lines.file,
            declared,
            found,
        }),
        _ => Ok(()),
    }
}

struct Fields<'a> {
    file: &'static str,
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(file: &'static str, line: usize, text: &'a str) -> Self {
        Self {
            file,
            line,
            it: text.split_whitespace(),
        }
    }

    fn err(&self, message: impl Into<String>) -> ColmapError {
        ColmapError::Parse {
            file: self.file,
            line: self.line,
            message: message.into(),
        }
    }

    fn next_str(&mut self, what: &str) -> Result<&'a str, ColmapError> {
        self.it.next().ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, ColmapError> {
        let s = self.next_str(what)?;
        s.parse().map_err(|_| self.err(format!("invalid {what} '{s}'")))
    }

    fn finite(&mut self, what: &str) -> Result<f64, ColmapError> {
        let v: f64 = self.next(what)?;
        if !v.is_finite() {
            return Err(self.err(format!("{what} is not finite")));
        }
        Ok(v)
    }

    fn end(&mut self) -> Result<(), ColmapError> {
        match self.it.next() {
            Some(t) => Err(self.err(format!("unexpected trailing field '{t}'"))),
            None => Ok(()),
        }
    }
}

pub fn parse_cameras(text: &str) -> Result<BTreeMap<u32, ColmapCamera>, ColmapError> {
    const FILE: &str = "cameras.txt";
    let lines = split_lines(FILE, text, "Number of cameras:")?;
    let mut out = BTreeMap::new();
    for &(no, line) in &lines.data {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(FILE, no, line);
        let id: u32 = f.next("camera id")?;
        let model = match f.next_str("model")? {
            "PINHOLE" => CameraModel::Pinhole,
            "SIMPLE_PINHOLE" => CameraModel::SimplePinhole,
            other => {
                return Err(ColmapError::UnsupportedModel {
                    file: FILE,
                    line: no,
                    model: other.to_string(),
                })
            }
        };
        let width: u32 = f.next("width")?;
        let height: u32 = f.next("height")?;
        if width == 0 || height == 0 {
            return Err(f.err("image size must be positive"));
        }
        let params = (0..model.param_count()).map(|_| f.finite("parameter")).collect::<Result<Vec<_>, _>>()?;
        f.end()?;
        if out
            .insert(
                id,
                ColmapCamera {
                    id,
                    model,
                    width,
                    height,
                    params,
                },
            )
            .is_some()
        {
            return Err(f.err(format!("duplicate camera id {id}")));
        }
    }
    check_count(&lines, out.len())?;
    Ok(out)
}

fn normalized(q: [f64; 4]) -> Option<[f64; 4]> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    // Leave unit quaternions untouched so round trips are exact.
    if (n - 1.0).abs() <= 1e-12 {
        Some(q)
    } else {
        Some(q.map(|v| v / n))
    }
}

pub fn parse_images(text: &str) -> Result<BTreeMap<u32, ColmapImage>, ColmapError> {
    const FILE: &str = "images.txt";
    let lines = split_lines(FILE, text, "Number of images:")?;
    let mut out = BTreeMap::new();
    let mut i = 0;
    let data = &lines.data;
    while i < data.len() {
        let (no, line) = data[i];
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        let mut f = Fields::new(FILE, no, line);
        let id: u32 = f.next("image id")?;
        let q = [f.finite("qw")?, f.finite("qx")?, f.finite("qy")?, f.finite("qz")?];
        let qvec = normalized(q).ok_or_else(|| f.err("zero quaternion"))?;
        let tvec = [f.finite("tx")?, f.finite("ty")?, f.finite("tz")?];
        let camera_id: u32 = f.next("camera id")?;
        let name = f.next_str("name")?.to_string();
        f.end()?;
        let mut points2d = Vec::new();
        if let Some(&(pno, pline)) = data.get(i + 1) {
            let mut p = Fields::new(FILE, pno, pline);
            let tokens = pline.split_whitespace().count();
            if tokens % 3 != 0 {
                return Err(p.err("points2D line must hold (x, y, id) triples"));
            }
            for _ in 0..tokens / 3 {
                points2d.push((p.finite("x")?, p.finite("y")?, p.next::<i64>("point3D id")?));
            }
        }
        i += 2;
        let img = ColmapImage {
            id,
            qvec,
            tvec,
            camera_id,
            name,
            points2d,
        };
        if out.insert(id, img).is_some() {
            return Err(ColmapError::Parse {
                file: FILE,
                line: no,
                message: format!("duplicate image id {id}"),
            });
        }
    }
    check_count(&lines, out.len())?;
    Ok(out)
}

pub fn parse_points(text: &str) -> Result<Vec<ColmapPoint>, ColmapError> {
    const FILE: &str = "points3D.txt";
    let lines = split_lines(FILE, text, "Number of points:")?;
    let mut out = Vec::new();
    for &(no, line) in &lines.data {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = Fields::new(FILE, no, line);
        let id: u64 = f.next("point id")?;
        let xyz = Vec3::new(f.finite("x")?, f.finite("y")?, f.finite("z")?);
        let rgb = [f.next::<u8>("r")?, f.next::<u8>("g")?, f.next::<u8>("b")?];
        let error: f64 = f.next("error")?;
        let mut track = Vec::new();
        let rest: Vec<&str> = f.it.by_ref().collect();
        if rest.len() % 2 != 0 {
            return Err(f.err("track must hold (image id, point2D index) pairs"));
        }
        for pair in rest.chunks(2) {
            let a = pair[0].parse().map_err(|_| f.err(format!("invalid track image id '{}'", pair[0])))?;
            let b = pair[1].parse().map_err(|_| f.err(format!("invalid track index '{}'", pair[1])))?;
            track.push((a, b));
        }
        out.push(ColmapPoint { id, xyz, rgb, error, track });
    }
    check_count(&lines, out.len())?;
    Ok(out)
}

/// Parses the three text files and checks cross references.
pub fn parse_bundle(cameras: &str, images: &str, points: &str) -> Result<SfmBundle, ColmapError> {
    let bundle = SfmBundle {
        cameras: parse_cameras(cameras)?,
        images: parse_images(images)?,
        points: parse_points(points)?,
    };
    for img in bundle.images.values() {
        if !bundle.cameras.contains_key(&img.camera_id) {
            return Err(ColmapError::MissingCamera {
                image: img.id,
                camera: img.camera_id,
            });
        }
    }
    Ok(bundle)
}

/// Byte-level entry point; invalid UTF-8 is a parse error.
pub fn parse_bundle_bytes(cameras: &[u8], images: &[u8], points: &[u8]) -> Result<SfmBundle, ColmapError> {
    let text = |file: &'static str, b: &[u8]| -> Result<String, ColmapError> {
        String::from_utf8(b.to_vec()).map_err(|e| ColmapError::Parse {
            file,
            line: b[..e.utf8_error().valid_up_to()].iter().filter(|&&c| c == b'\n').count() + 1,
            message: "invalid UTF-8".into(),
        })
    };
    parse_bundle(
        &text("cameras.txt", cameras)?,
        &text("images.txt", images)?,
        &text("points3D.txt", points)?,
    )
}

pub fn parse_colmap_text(dir: &Path) -> Result<SfmBundle, ColmapError> {
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ColmapError::NotFound(p.display().to_string()),
            _ => ColmapError::Io(format!("{}: {e}", p.display())),
        })
    };
    parse_bundle(&read("cameras.txt")?, &read("images.txt")?, &read("points3D.txt")?)
}

// ---------------------------------------------------------------------------
// Writing

fn assemble(comments: &[String], data: &[String]) -> String {
    let mut out = format!("# crc32: {:08x}\n", data_checksum(data.iter().map(|s| s.as_str())));
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for d in data {
        let _ = writeln!(out, "{d}");
    }
    out
}

pub fn format_cameras(cameras: &BTreeMap<u32, ColmapCamera>) -> String {
    let data: Vec<String> = cameras
        .values()
        .map(|c| {
            let params: Vec<String> = c.params.iter().map(|p| p.to_string()).collect();
            format!("{} {} {} {} {}", c.id, c.model.name(), c.width, c.height, params.join(" "))
        })
        .collect();
    assemble(
        &[
            "Camera list with one line of data per camera:".into(),
            "  CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]".into(),
            format!("Number of cameras: {}", cameras.len()),
        ],
        &data,
    )
}

pub fn format_images(images: &BTreeMap<u32, ColmapImage>) -> String {
    let mut data = Vec::new();
    let mut obs = 0;
    for im in images.values() {
        let [qw, qx, qy, qz] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        data.push(format!("{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}", im.id, im.camera_id, im.name));
        let pts: Vec<String> = im.points2d.iter().map(|(x, y, id)| format!("{x} {y} {id}")).collect();
        obs += im.points2d.len();
        data.push(pts.join(" "));
    }
    let mean = if images.is_empty() { 0.0 } else { obs as f64 / images.len() as f64 };
    assemble(
        &[
            "Image list with two lines of data per image:".into(),
            "  IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME".into(),
            "  POINTS2D[] as (X, Y, POINT3D_ID)".into(),
            format!("Number of images: {}, mean observations per image: {mean}", images.len()),
        ],
        &data,
    )
}

pub fn format_points(points: &[ColmapPoint]) -> String {
    let mut data = Vec::new();
    let mut track_total = 0;
    for p in points {
        let mut line = format!("{} {} {} {} {} {} {} {}", p.id, p.xyz.x, p.xyz.y, p.xyz.z, p.rgb[0], p.rgb[1], p.rgb[2], p.error);
        for (img, idx) in &p.track {
            let _ = write!(line, " {img} {idx}");
        }
        track_total += p.track.len();
        data.push(line);
    }
    let mean = if points.is_empty() { 0.0 } else { track_total as f64 / points.len() as f64 };
    assemble(
        &[
            "3D point list with one line of data per point:".into(),
            "  POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)".into(),
            format!("Number of points: {}, mean track length: {mean}", points.len()),
        ],
        &data,
    )
}

pub fn write_colmap_text(bundle: &SfmBundle, dir: &Path) -> Result<(), ColmapError> {
    std::fs::create_dir_all(dir).map_err(|e| ColmapError::Io(format!("{}: {e}", dir.display())))?;
    for (name, text) in [
        ("cameras.txt", format_cameras(&bundle.cameras)),
        ("images.txt", format_images(&bundle.images)),
        ("points3D.txt", format_points(&bundle.points)),
    ] {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| ColmapError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
