//! Independent reference implementations shared by the integration and
//! acceptance tests. The oracles call nothing in the code they check beyond
//! the plain data types; the fixture builders at the end use library writers.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tetrasplat::image::ImageF;
use tetrasplat::scene::{Camera, Gaussian, SceneModel, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Camera at the origin looking down +z.
pub fn front_camera(size: u32, focal: f64) -> Camera {
    Camera::new(focal, focal, size as f64 / 2.0, size as f64 / 2.0, size, size, Matrix3::identity(), Vector3::zeros()).unwrap()
}

pub fn random_quaternion(r: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 && n < 1.0 {
            return q;
        }
    }
}

/// A free Gaussian in front of [`front_camera`].
pub fn random_gaussian(r: &mut impl Rng, sh_degree: usize, size: u32, focal: f64) -> Gaussian {
    let z = r.random_range(2.0..5.0);
    let half = size as f64 / 2.0 / focal * z;
    let position = Vec3::new(r.random_range(-half..half), r.random_range(-half..half), z);
    let coeffs = (sh_degree + 1) * (sh_degree + 1);
    let mut sh = vec![[0.0; 3]; coeffs];
    for (k, c) in sh.iter_mut().enumerate() {
        let amp = if k == 0 { 1.0 } else { 0.15 };
        *c = std::array::from_fn(|_| r.random_range(-amp..amp));
    }
    Gaussian {
        position,
        rotation: random_quaternion(r),
        log_scale: Vec3::new(
            r.random_range(-3.5f64..-1.2),
            r.random_range(-3.5f64..-1.2),
            r.random_range(-3.5f64..-1.2),
        ),
        opacity_logit: r.random_range(-3.0..3.0),
        sh,
        anchor: None,
    }
}

pub fn random_scene(r: &mut impl Rng, n: usize, sh_degree: usize, size: u32, focal: f64) -> SceneModel {
    SceneModel {
        gaussians: (0..n).map(|_| random_gaussian(r, sh_degree, size, focal)).collect(),
        mesh: None,
        sh_degree,
    }
}

// ---------------------------------------------------------------------------
// Brute-force compositor

/// Hamilton quaternion (w, x, y, z) to rotation matrix, written out by hand.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = if n == 0.0 { [1.0, 0.0, 0.0, 0.0] } else { q.map(|v| v / n) };
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Real SH colour, evaluated with nested formulas independent of the library's tables.
pub fn sh_color(sh: &[[f64; 3]], d: &Vector3<f64>) -> [f64; 3] {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut basis = vec![SH_C0];
    if sh.len() >= 4 {
        basis.extend([-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    }
    if sh.len() >= 9 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis.extend([
            1.092_548_430_592_079_2 * x * y,
            -1.092_548_430_592_079_2 * y * z,
            0.315_391_565_252_520_05 * (2.0 * zz - xx - yy),
            -1.092_548_430_592_079_2 * x * z,
            0.546_274_215_296_039_6 * (xx - yy),
        ]);
    }
    if sh.len() >= 16 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis.extend([
            -0.590_043_589_926_643_5 * y * (3.0 * xx - yy),
            2.890_611_442_640_554 * x * y * z,
            -0.457_045_799_464_465_8 * y * (4.0 * zz - xx - yy),
            0.373_176_332_590_115_4 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            -0.457_045_799_464_465_8 * x * (4.0 * zz - xx - yy),
            1.445_305_721_320_277 * z * (xx - yy),
            -0.590_043_589_926_643_5 * x * (xx - 3.0 * yy),
        ]);
    }
    let mut c = [0.5; 3];
    for (coef, b) in sh.iter().zip(basis.iter()) {
        for ch in 0..3 {
            c[ch] += coef[ch] * b;
        }
    }
    c.map(|v| v.max(0.0))
}

pub struct RefSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub rgb: [f64; 3],
}

/// Projects with the textbook EWA formulas; `None` when behind the near plane.
pub fn reference_project(g: &Gaussian, position: &Vector3<f64>, index: usize, cam: &Camera) -> Option<RefSplat> {
    let t = cam.rotation * position + cam.translation;
    if t.z <= 0.01 {
        return None;
    }
    let r = quat_to_matrix(g.rotation);
    let s = Matrix3::from_diagonal(&g.log_scale.map(|v| v.exp().max(1e-6)));
    let sigma = r * s * s * r.transpose();
    let j = nalgebra::Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    );
    let cov = j * cam.rotation * sigma * cam.rotation.transpose() * j.transpose();
    let cov = Matrix2::new(cov[(0, 0)] + 0.3, cov[(0, 1)], cov[(1, 0)], cov[(1, 1)] + 0.3);
    let conic = cov.try_inverse()?;
    let cam_center = -(cam.rotation.transpose() * cam.translation);
    let dir = (position - cam_center).normalize();
    Some(RefSplat {
        index,
        depth: t.z,
        mean: [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy],
        conic,
        opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
        rgb: sh_color(&g.sh, &dir),
    })
}

pub fn reference_alpha(s: &RefSplat, x: f64, y: f64) -> Option<f64> {
    let d = nalgebra::Vector2::new(x - s.mean[0], y - s.mean[1]);
    let power = 0.5 * (d.transpose() * s.conic * d)[0];
    if power > 4.5 {
        return None;
    }
    Some((s.opacity * (-power).exp()).min(0.99))
}

pub struct RefRender {
    pub image: ImageF,
    pub alpha: Vec<f64>,
    /// `(pixel, gaussian)` for every contribution, in compositing order.
    pub log: Vec<(usize, usize)>,
}

/// Per-pixel compositor over one global depth sort: no tiles, no culling
/// beyond the near plane. With `early_exit` it stops once transmittance
/// drops below 1e-4, like the production renderer.
pub fn reference_render(scene: &SceneModel, cam: &Camera, background: [f64; 3], early_exit: bool) -> RefRender {
    let mut splats: Vec<RefSplat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let pos = match (&g.anchor, &scene.mesh) {
                (Some(a), Some(m)) => {
                    let f = m.faces[a.face];
                    let l = a.logits;
                    let mx = l.max();
                    let e = l.map(|v| (v - mx).exp());
                    let w = e / e.sum();
                    m.vertices[f[0]] * w[0] + m.vertices[f[1]] * w[1] + m.vertices[f[2]] * w[2]
                }
                _ => g.position,
            };
            reference_project(g, &pos, i, cam)
        })
        .collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let mut image = ImageF::new(cam.width, cam.height);
    let mut alpha = vec![0.0; cam.pixel_count()];
    let mut log = Vec::new();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let p = (py * cam.width + px) as usize;
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for s in &splats {
                let Some(a) = reference_alpha(s, x, y) else { continue };
                for ch in 0..3 {
                    c[ch] += s.rgb[ch] * a * t;
                }
                t *= 1.0 - a;
                log.push((p, s.index));
                if early_exit && t < 1e-4 {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += t * background[ch];
            }
            image.set(px, py, c);
            alpha[p] = 1.0 - t;
        }
    }
    RefRender { image, alpha, log }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rigid motion of a quaternion-parameterised Gaussian: rotation applied on the left.
pub fn rotate_quaternion(q: [f64; 4], rot: &UnitQuaternion<f64>) -> [f64; 4] {
    let g = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
    let r = rot.quaternion() * g;
    [r.w, r.i, r.j, r.k]
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

use tetrasplat::mesh::TetraMesh;
use tetrasplat::raster::{rasterize, rasterize_backward, render_forward, GaussianGrad, RenderOptions};
use tetrasplat::scene::Anchor;

/// Per-pixel weights for a linear loss `L = Σ w · C`, zero on pixels near
/// any splat's footprint edge so that small perturbations never change
/// which splats touch a pixel.
pub fn safe_weights(scene: &SceneModel, cam: &Camera, r: &mut impl Rng) -> ImageF {
    let splats: Vec<RefSplat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| reference_project(g, &rendered_position(scene, i), i, cam))
        .collect();
    let mut w = ImageF::new(cam.width, cam.height);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let safe = splats.iter().all(|s| {
                let d = nalgebra::Vector2::new(x - s.mean[0], y - s.mean[1]);
                let power = 0.5 * (d.transpose() * s.conic * d)[0];
                power < 4.0 || power > 5.0
            });
            if safe {
                w.set(px, py, std::array::from_fn(|_| r.random_range(-1.0..1.0)));
            }
        }
    }
    w
}

pub fn rendered_position(scene: &SceneModel, i: usize) -> Vector3<f64> {
    let g = &scene.gaussians[i];
    match (&g.anchor, &scene.mesh) {
        (Some(a), Some(m)) => {
            let f = m.faces[a.face];
            let e = a.logits.map(|v| (v - a.logits.max()).exp());
            let w = e / e.sum();
            m.vertices[f[0]] * w[0] + m.vertices[f[1]] * w[1] + m.vertices[f[2]] * w[2]
        }
        _ => g.position,
    }
}

fn weighted_loss(scene: &SceneModel, cam: &Camera, w: &ImageF) -> f64 {
    let img = rasterize(scene, cam).unwrap().image;
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// Parameter classes checked, with accessors into a Gaussian.
pub fn parameter_classes(anchored: bool) -> Vec<(&'static str, Vec<fn(&mut Gaussian) -> &mut f64>)> {
    let mut classes: Vec<(&'static str, Vec<fn(&mut Gaussian) -> &mut f64>)> = Vec::new();
    if anchored {
        classes.push((
            "barycentric logits",
            vec![
                |g| &mut g.anchor.as_mut().unwrap().logits.x,
                |g| &mut g.anchor.as_mut().unwrap().logits.y,
                |g| &mut g.anchor.as_mut().unwrap().logits.z,
            ],
        ));
    } else {
        classes.push(("position", vec![|g| &mut g.position.x, |g| &mut g.position.y, |g| &mut g.position.z]));
    }
    classes.push((
        "rotation",
        vec![|g| &mut g.rotation[0], |g| &mut g.rotation[1], |g| &mut g.rotation[2], |g| &mut g.rotation[3]],
    ));
    classes.push(("log scale", vec![|g| &mut g.log_scale.x, |g| &mut g.log_scale.y, |g| &mut g.log_scale.z]));
    classes.push(("opacity logit", vec![|g| &mut g.opacity_logit]));
    classes.push(("sh dc", vec![|g| &mut g.sh[0][0], |g| &mut g.sh[0][1], |g| &mut g.sh[0][2]]));
    classes
}

fn analytic_entry(g: &GaussianGrad, class: &str, k: usize) -> f64 {
    match class {
        "barycentric logits" => g.logits[k],
        "position" => g.position[k],
        "rotation" => g.rotation[k],
        "log scale" => g.log_scale[k],
        "opacity logit" => g.opacity_logit,
        "sh dc" => g.sh[0][k],
        _ => unreachable!(),
    }
}

/// Relative error `|a - n| / max(|a|, |n|)` per parameter class for
/// Gaussian `target`, over all classes plus the higher-order SH block.
/// Classes whose gradients are both below 1e-9 report zero.
pub fn gradient_errors(scene: &SceneModel, cam: &Camera, target: usize, weights: &ImageF) -> Vec<(String, f64)> {
    let (_, state) = render_forward(scene, cam, &RenderOptions::default()).unwrap();
    let grads = rasterize_backward(scene, cam, &state, weights).unwrap();
    let g = &grads[target];
    let h = 1e-6;
    let mut out = Vec::new();
    let fd = |set: &dyn Fn(&mut Gaussian) -> &mut f64| {
        let mut plus = scene.clone();
        *set(&mut plus.gaussians[target]) += h;
        let mut minus = scene.clone();
        *set(&mut minus.gaussians[target]) -= h;
        (weighted_loss(&plus, cam, weights) - weighted_loss(&minus, cam, weights)) / (2.0 * h)
    };
    let anchored = scene.gaussians[target].anchor.is_some();
    for (class, params) in parameter_classes(anchored) {
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for (k, p) in params.iter().enumerate() {
            num.push(fd(p));
            ana.push(analytic_entry(g, class, k));
        }
        out.push((class.to_string(), relative_error(&ana, &num)));
    }
    let coeffs = scene.gaussians[target].sh.len();
    if coeffs > 1 {
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for k in 1..coeffs {
            for ch in 0..3 {
                let mut plus = scene.clone();
                plus.gaussians[target].sh[k][ch] += h;
                let mut minus = scene.clone();
                minus.gaussians[target].sh[k][ch] -= h;
                num.push((weighted_loss(&plus, cam, weights) - weighted_loss(&minus, cam, weights)) / (2.0 * h));
                ana.push(g.sh[k][ch]);
            }
        }
        out.push(("sh rest".to_string(), relative_error(&ana, &num)));
    }
    out
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-9 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// A single random splat for gradient checks: opacity below the alpha clamp
/// and a colour safely above zero. With `anchored` it sits on a face of a
/// small tetrahedron in front of the camera.
pub fn gradient_scene(r: &mut impl Rng, anchored: bool, size: u32, focal: f64) -> SceneModel {
    let sh_degree = r.random_range(0..=3);
    let mut g = random_gaussian(r, sh_degree, size, focal);
    g.opacity_logit = r.random_range(-2.0..2.0);
    g.log_scale = Vec3::new(r.random_range(-2.5..-1.5), r.random_range(-2.5..-1.5), r.random_range(-2.5..-1.5));
    for c in 0..3 {
        g.sh[0][c] = r.random_range(0.2..1.2);
    }
    let mut scene = SceneModel {
        gaussians: vec![g],
        mesh: None,
        sh_degree,
    };
    if anchored {
        let z = r.random_range(2.5..4.0);
        let s = z / focal * size as f64 * 0.25;
        let pts = [
            Vec3::new(-s, -s, z),
            Vec3::new(s, -s * 0.5, z + 0.3),
            Vec3::new(0.0, s, z - 0.2),
            Vec3::new(0.1 * s, 0.0, z + 1.0),
        ];
        let mesh = TetraMesh::build(&pts, None).unwrap();
        let face = r.random_range(0..mesh.faces.len());
        scene.gaussians[0].anchor = Some(Anchor {
            face,
            logits: Vec3::new(r.random_range(-0.7..0.7), r.random_range(-0.7..0.7), r.random_range(-0.7..0.7)),
        });
        scene.mesh = Some(mesh);
        scene.refresh_anchored_positions();
    }
    scene
}

// ---------------------------------------------------------------------------
// Mesh oracles

pub fn random_cloud(r: &mut impl Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn det3(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Circumcentre by Cramer's rule on the three bisector-plane equations.
pub fn circumcenter(p: [Vec3; 4]) -> Vec3 {
    let rows: Vec<[f64; 3]> = (1..4).map(|i| [p[i].x - p[0].x, p[i].y - p[0].y, p[i].z - p[0].z]).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| 0.5 * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2])).collect();
    let d = det3(rows[0], rows[1], rows[2]);
    let col = |k: usize| -> f64 {
        let m: Vec<[f64; 3]> = (0..3)
            .map(|i| {
                let mut r = rows[i];
                r[k] = rhs[i];
                r
            })
            .collect();
        det3(m[0], m[1], m[2]) / d
    };
    p[0] + Vec3::new(col(0), col(1), col(2))
}

/// Vertices strictly inside some tetrahedron's circumsphere, with a relative
/// tolerance on the squared radius.
pub fn circumsphere_violations(vertices: &[Vec3], tets: &[[usize; 4]], rel_tol: f64) -> usize {
    let mut bad = 0;
    for t in tets {
        let p = t.map(|i| vertices[i]);
        let c = circumcenter(p);
        let r2 = (p[0] - c).norm_squared();
        for (v, q) in vertices.iter().enumerate() {
            if !t.contains(&v) && (q - c).norm_squared() < r2 * (1.0 - rel_tol) {
                bad += 1;
            }
        }
    }
    bad
}

/// Barycentric containment test in plain floating point, with slack.
pub fn in_tet(p: &Vec3, v: [Vec3; 4], slack: f64) -> bool {
    let m = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
    match m.try_inverse() {
        Some(inv) => {
            let l = inv * (p - v[0]);
            let l0 = 1.0 - l.sum();
            l.iter().all(|&x| x >= -slack) && l0 >= -slack
        }
        None => false,
    }
}

/// Random convex combination of a few cloud points: always inside the hull.
pub fn sample_inside(r: &mut impl Rng, cloud: &[Vec3]) -> Vec3 {
    let k = 4.min(cloud.len());
    let mut w: Vec<f64> = (0..k).map(|_| -r.random_range(1e-6f64..1.0).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    (0..k).map(|i| cloud[r.random_range(0..cloud.len())] * w[i]).sum()
}

/// A point beyond the hull's support in a random direction: always outside.
pub fn sample_outside(r: &mut impl Rng, cloud: &[Vec3]) -> Vec3 {
    let d = loop {
        let d = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = d.norm();
        if n > 0.1 && n <= 1.0 {
            break d / n;
        }
    };
    let support = cloud.iter().map(|p| p.dot(&d)).fold(f64::NEG_INFINITY, f64::max);
    let base = cloud.iter().copied().max_by(|a, b| a.dot(&d).total_cmp(&b.dot(&d))).unwrap();
    let lateral = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
    let lateral = lateral - d * lateral.dot(&d);
    let p = base + lateral + d * r.random_range(1e-3..0.5);
    debug_assert!(p.dot(&d) > support);
    p
}

// ---------------------------------------------------------------------------
// Curvature oracle

/// Eigenvalues of a symmetric 3×3 matrix, ascending, by the closed-form
/// trigonometric solution of the characteristic cubic.
pub fn sym_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let q = a.trace() / 3.0;
    if p1 == 0.0 {
        let mut e = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        e.sort_by(f64::total_cmp);
        return e;
    }
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (a - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(f64::total_cmp);
    e
}

/// Brute-force kNN (excluding self, ties by index) and surface variation
/// of the point plus its neighbours.
pub fn reference_curvature(points: &[Vec3], k: usize) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            let mut order: Vec<usize> = (0..points.len()).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                let da = (points[a] - points[i]).norm_squared();
                let db = (points[b] - points[i]).norm_squared();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            let mut hood: Vec<Vec3> = vec![points[i]];
            hood.extend(order[..k].iter().map(|&j| points[j]));
            let mean = hood.iter().sum::<Vec3>() / hood.len() as f64;
            let mut cov = Matrix3::zeros();
            for p in &hood {
                let d = p - mean;
                cov += d * d.transpose();
            }
            cov /= hood.len() as f64;
            let e = sym_eigenvalues(&cov).map(|v| v.max(0.0));
            let s: f64 = e.iter().sum();
            if s == 0.0 {
                0.0
            } else {
                e[0] / s
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Prune and importance oracles

/// Survivors of ranked pruning: rank by (score, index), drop the unprotected
/// members of the bottom ⌊ratio·N⌋.
pub fn reference_survivors(scores: &[f64], ratio: f64, protect: Option<&[bool]>) -> Vec<usize> {
    let n = scores.len();
    let quota = (ratio * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut drop = vec![false; n];
    for &i in &order[..quota] {
        if !protect.is_some_and(|p| p[i]) {
            drop[i] = true;
        }
    }
    (0..n).filter(|&i| !drop[i]).collect()
}

/// `min(V / V90, 1)^0.1` with the nearest-rank 90th percentile.
pub fn reference_gamma(scene: &SceneModel) -> Vec<f64> {
    let vols: Vec<f64> = scene
        .gaussians
        .iter()
        .map(|g| (g.log_scale.x.exp().max(1e-6)) * (g.log_scale.y.exp().max(1e-6)) * (g.log_scale.z.exp().max(1e-6)))
        .collect();
    let mut s = vols.clone();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((0.9 * s.len() as f64).ceil() as usize).clamp(1, s.len());
    let v90 = s[rank - 1];
    vols.iter().map(|v| (v / v90).min(1.0).powf(0.1)).collect()
}

pub fn opacity(g: &Gaussian) -> f64 {
    1.0 / (1.0 + (-g.opacity_logit).exp())
}

/// Importance from the brute-force compositor's contribution log. Opacity
/// goes through the library sigmoid so scores can be compared exactly.
pub fn reference_importance(scene: &SceneModel, cameras: &[Camera]) -> (Vec<f64>, Vec<u64>) {
    let mut hits = vec![0u64; scene.len()];
    for cam in cameras {
        for (_, g) in reference_render(scene, cam, [0.0; 3], true).log {
            hits[g] += 1;
        }
    }
    let gamma = reference_gamma(scene);
    let scores = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| hits[i] as f64 * g.opacity() * gamma[i])
        .collect();
    (scores, hits)
}

/// Camera at `eye` looking at the origin, built without the library helper.
pub fn orbit_camera(eye: Vec3, size: u32, focal: f64) -> Camera {
    let f = (-eye).normalize();
    let up = if f.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let right = f.cross(&up).normalize();
    let down = f.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), f.transpose()]);
    Camera::new(focal, focal, size as f64 / 2.0, size as f64 / 2.0, size, size, r, -(r * eye)).unwrap()
}

// ---------------------------------------------------------------------------
// K-means oracle

/// Plain Lloyd from `k` distinct random data points; best of `restarts`.
pub fn reference_kmeans_inertia(data: &[f64], dim: usize, k: usize, restarts: usize, seed: u64) -> f64 {
    let n = data.len() / dim;
    let mut r = rng(seed);
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let mut picks: Vec<usize> = Vec::new();
        while picks.len() < k {
            let i = r.random_range(0..n);
            if !picks.contains(&i) {
                picks.push(i);
            }
        }
        let mut cents: Vec<Vec<f64>> = picks.iter().map(|&i| row(i).to_vec()).collect();
        let mut inertia = f64::INFINITY;
        for _ in 0..300 {
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            let mut total = 0.0;
            for i in 0..n {
                let (c, d) = (0..k)
                    .map(|c| (c, d2(row(i), &cents[c])))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap();
                total += d;
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    cents[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if (inertia - total).abs() <= 1e-12 * total.max(1e-300) {
                inertia = total;
                break;
            }
            inertia = total;
        }
        best = best.min(inertia);
    }
    best
}

/// Random splats around the origin seen by two orbiting cameras.
pub fn multiview_scene(r: &mut impl Rng, n: usize) -> (SceneModel, Vec<Camera>) {
    let gaussians = (0..n)
        .map(|_| {
            let mut g = Gaussian::isotropic(
                Vec3::new(r.random_range(-0.6..0.6), r.random_range(-0.6..0.6), r.random_range(-0.6..0.6)),
                r.random_range(0.05..0.3),
                r.random_range(0.05..0.99),
                [r.random_range(0.0..1.0), 0.5, 0.5],
                1,
            );
            g.rotation = random_quaternion(r);
            g.log_scale += Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 0.0);
            g
        })
        .collect();
    let cams = (0..2)
        .map(|_| {
            let d = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(0.3..1.0)).normalize();
            orbit_camera(d * 3.0, 16, 16.0)
        })
        .collect();
    (
        SceneModel {
            gaussians,
            mesh: None,
            sh_degree: 1,
        },
        cams,
    )
}

/// Points on a random plane.
pub fn plane_cloud(r: &mut impl Rng, n: usize) -> Vec<Vec3> {
    let normal = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 1.0).normalize();
    let u = normal.cross(&Vec3::x()).normalize();
    let v = normal.cross(&u);
    let origin = Vec3::new(0.3, -0.2, 0.1);
    (0..n).map(|_| origin + u * r.random_range(-1.0..1.0) + v * r.random_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------------------
// Fuzzing

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FuzzTally {
    pub cases: usize,
    /// Parser returned an error.
    pub errors: usize,
    /// Parser succeeded with a result equal to the unmutated input's.
    pub unchanged: usize,
    /// Parser succeeded with a different result.
    pub silent: usize,
    pub panics: usize,
}

impl FuzzTally {
    pub fn merge(&mut self, o: FuzzTally) {
        self.cases += o.cases;
        self.errors += o.errors;
        self.unchanged += o.unchanged;
        self.silent += o.silent;
        self.panics += o.panics;
    }
}

/// Truncation, bit flips or byte overwrites; never returns the input unchanged.
pub fn mutate(r: &mut impl Rng, bytes: &[u8]) -> Vec<u8> {
    loop {
        let mut out = bytes.to_vec();
        match r.random_range(0..3) {
            0 if !bytes.is_empty() => out.truncate(r.random_range(0..bytes.len())),
            1 if !bytes.is_empty() => {
                for _ in 0..r.random_range(1..=4) {
                    let i = r.random_range(0..out.len());
                    out[i] ^= 1 << r.random_range(0..8);
                }
            }
            2 if !bytes.is_empty() => {
                let start = r.random_range(0..out.len());
                let len = r.random_range(1..=16).min(out.len() - start);
                for b in &mut out[start..start + len] {
                    *b = r.random();
                }
            }
            _ => out.extend(std::iter::repeat_n(0u8, r.random_range(1..9))),
        }
        if out != bytes {
            return out;
        }
    }
}

/// Runs `parse(which, bytes)` on `cases` mutations of randomly chosen
/// inputs, comparing successes against `expected[which]`.
pub fn fuzz<T: PartialEq, E>(
    seed: u64,
    cases: usize,
    inputs: &[Vec<u8>],
    expected: &[T],
    parse: impl Fn(usize, &[u8]) -> Result<T, E>,
) -> FuzzTally {
    let mut r = rng(seed);
    let mut tally = FuzzTally::default();
    let prev = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for _ in 0..cases {
        let which = r.random_range(0..inputs.len());
        let m = mutate(&mut r, &inputs[which]);
        tally.cases += 1;
        match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| parse(which, &m))) {
            Err(_) => tally.panics += 1,
            Ok(Err(_)) => tally.errors += 1,
            Ok(Ok(v)) if v == expected[which] => tally.unchanged += 1,
            Ok(Ok(_)) => tally.silent += 1,
        }
    }
    std::panic::set_hook(prev);
    tally
}

// ---------------------------------------------------------------------------
// Fixtures

/// Scene anchored to a Delaunay mesh of a random cloud.
pub fn anchored_scene(r: &mut impl Rng, points: usize, k: usize, sh_degree: usize) -> SceneModel {
    let cloud = random_cloud(r, points);
    let mesh = tetrasplat::mesh::TetraMesh::build(&cloud, None).unwrap();
    let mut scene = tetrasplat::mesh::init_gaussians_on_faces(&mesh, k, sh_degree).unwrap();
    for g in &mut scene.gaussians {
        g.rotation = random_quaternion(r);
        g.opacity_logit = r.random_range(-3.0..3.0);
        for c in &mut g.sh {
            *c = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        }
        if let Some(a) = &mut g.anchor {
            a.logits = Vec3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        }
    }
    scene.refresh_anchored_positions();
    scene
}

pub fn random_bundle(r: &mut impl Rng) -> tetrasplat::io::SfmBundle {
    use tetrasplat::io::colmap::{CameraModel, ColmapCamera, ColmapImage, ColmapPoint};
    let mut b = tetrasplat::io::SfmBundle::default();
    for id in 1..=r.random_range(1..4u32) {
        let model = if r.random() { CameraModel::Pinhole } else { CameraModel::SimplePinhole };
        let n = if model == CameraModel::Pinhole { 4 } else { 3 };
        let (width, height) = (r.random_range(16..2000), r.random_range(16..2000));
        let params = (0..n).map(|_| r.random_range(10.0..1000.0)).collect();
        b.cameras.insert(id, ColmapCamera { id, model, width, height, params });
    }
    let cams = b.cameras.len() as u32;
    for id in 1..=r.random_range(1..6u32) {
        let q = random_quaternion(r);
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let points2d = (0..r.random_range(0..5))
            .map(|_| (r.random_range(0.0..500.0), r.random_range(0.0..500.0), r.random_range(-1..50i64)))
            .collect();
        b.images.insert(
            id,
            ColmapImage {
                id,
                qvec: q.map(|v| v / n),
                tvec: std::array::from_fn(|_| r.random_range(-5.0..5.0)),
                camera_id: r.random_range(1..=cams),
                name: format!("img_{id:03}.png"),
                points2d,
            },
        );
    }
    for id in 0..r.random_range(0..30u64) {
        let track = (0..r.random_range(0..4)).map(|_| (r.random_range(1..6u32), r.random_range(0..5u32))).collect();
        b.points.push(ColmapPoint {
            id: id + 1,
            xyz: Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)),
            rgb: std::array::from_fn(|_| r.random()),
            error: r.random_range(0.0..2.0),
            track,
        });
    }
    b
}

/// Compact files of every layout, paired with their decoded models.
pub fn compact_corpus(seed: u64) -> (Vec<Vec<u8>>, Vec<tetrasplat::io::CompactModel>) {
    use tetrasplat::io::compact::{decode, encode_quantized, encode_raw};
    use tetrasplat::io::Precision;
    use tetrasplat::vq::{quantize_scene, QuantizeConfig};
    let mut r = rng(seed);
    let free = random_scene(&mut r, 40, 1, 64, 64.0);
    let anchored = anchored_scene(&mut r, 12, 2, 0);
    let files = vec![
        encode_raw(&SceneModel::new(0), Precision::F32),
        encode_raw(&free, Precision::F32),
        encode_raw(&free, Precision::F64),
        encode_raw(&anchored, Precision::F32),
        encode_quantized(&quantize_scene(&free, &QuantizeConfig::uniform(8, seed)).unwrap()),
        encode_quantized(&quantize_scene(&anchored, &QuantizeConfig::uniform(5, seed)).unwrap()),
    ];
    let models = files.iter().map(|f| decode(f).unwrap()).collect();
    (files, models)
}

/// COLMAP text triples (cameras, images, points) and their parsed bundles.
pub fn colmap_corpus(seed: u64, count: usize) -> (Vec<[String; 3]>, Vec<tetrasplat::io::SfmBundle>) {
    use tetrasplat::io::colmap::{format_cameras, format_images, format_points};
    let mut r = rng(seed);
    let bundles: Vec<_> = (0..count).map(|_| random_bundle(&mut r)).collect();
    let texts = bundles
        .iter()
        .map(|b| [format_cameras(&b.cameras), format_images(&b.images), format_points(&b.points)])
        .collect();
    (texts, bundles)
}

pub fn fuzz_compact(seed: u64, cases: usize) -> FuzzTally {
    let (files, models) = compact_corpus(seed);
    fuzz(seed, cases, &files, &models, |_, b| tetrasplat::io::compact::decode(b))
}

pub fn fuzz_colmap(seed: u64, cases: usize) -> FuzzTally {
    let (texts, bundles) = colmap_corpus(seed, 4);
    // One input per (bundle, file) pair; the other two files stay intact.
    let inputs: Vec<Vec<u8>> = texts.iter().flat_map(|t| t.iter().map(|s| s.as_bytes().to_vec())).collect();
    let expected: Vec<_> = bundles.iter().flat_map(|b| std::iter::repeat_n(b.clone(), 3)).collect();
    fuzz(seed, cases, &inputs, &expected, |which, m| {
        let t = &texts[which / 3];
        let mut files: [&[u8]; 3] = [t[0].as_bytes(), t[1].as_bytes(), t[2].as_bytes()];
        files[which % 3] = m;
        tetrasplat::io::colmap::parse_bundle_bytes(files[0], files[1], files[2])
    })
}
