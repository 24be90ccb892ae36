use rayon::prelude::*;

use super::project::{project_at, Intermediates};
use super::{fingerprint, ProjectedSplat, RasterError, RenderOptions, TileGrid, FOOTPRINT_POWER, MAX_ALPHA, MIN_TRANSMITTANCE};
use crate::image::ImageF;
use crate::scene::{Camera, SceneModel, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: ImageF,
    /// Accumulated opacity `1 - T` per pixel.
    pub alpha: Vec<f64>,
    /// Number of splats that contributed to each pixel.
    pub contributors: Vec<u32>,
    /// Number of pixels each Gaussian contributed to, indexed like the scene.
    pub hits: Vec<u64>,
}

/// Intermediate results of a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub(crate) fingerprint: u64,
    pub(crate) splats: Vec<ProjectedSplat>,
    pub(crate) inter: Vec<Intermediates>,
    /// Per tile, indices into `splats` sorted front to back.
    pub(crate) tiles: Vec<Vec<u32>>,
    /// Per pixel, how many entries of its tile list were visited.
    pub(crate) last: Vec<u32>,
    pub(crate) final_t: Vec<f64>,
    pub(crate) background: [f64; 3],
}

impl ForwardState {
    pub fn splats(&self) -> &[ProjectedSplat] {
        &self.splats
    }
}

struct TileResult {
    color: Vec<[f64; 3]>,
    t: Vec<f64>,
    last: Vec<u32>,
    contrib: Vec<u32>,
    hits: Vec<u32>,
}

/// Renders with a black background.
pub fn rasterize(scene: &SceneModel, cam: &Camera) -> Result<RenderOutput, RasterError> {
    render_forward(scene, cam, &RenderOptions::default()).map(|(out, _)| out)
}

/// Position used for rendering: anchored Gaussians are placed from their face.
pub(crate) fn render_positions(scene: &SceneModel) -> Vec<Vec3> {
    scene
        .gaussians
        .iter()
        .map(|g| match &g.anchor {
            Some(a) => scene.anchored_position(a).unwrap_or(g.position),
            None => g.position,
        })
        .collect()
}

pub fn render_forward(scene: &SceneModel, cam: &Camera, options: &RenderOptions) -> Result<(RenderOutput, ForwardState), RasterError> {
    scene.validate()?;
    cam.validate()?;
    if let Some(index) = scene.gaussians.iter().position(|g| !g.is_finite()) {
        return Err(RasterError::NonFinite { index });
    }
    let positions = render_positions(scene);
    let projected: Vec<_> = scene
        .gaussians
        .par_iter()
        .zip(positions.par_iter())
        .enumerate()
        .map(|(i, (g, p))| project_at(g, p, i, cam, scene.sh_degree))
        .collect();
    let (splats, inter): (Vec<_>, Vec<_>) = projected.into_iter().flatten().unzip();

    let grid = TileGrid::new(cam);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); grid.count()];
    for (si, s) in splats.iter().enumerate() {
        let (x0, x1, y0, y1) = s.pixel_rect;
        for ty in y0 / super::TILE_SIZE..=y1 / super::TILE_SIZE {
            for tx in x0 / super::TILE_SIZE..=x1 / super::TILE_SIZE {
                tiles[(ty * grid.tiles_x + tx) as usize].push(si as u32);
            }
        }
    }
    tiles.par_iter_mut().for_each(|list| {
        list.sort_by(|&a, &b| {
            let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
            sa.depth.total_cmp(&sb.depth).then(sa.source_index.cmp(&sb.source_index))
        })
    });

    let bg = options.background;
    let results: Vec<TileResult> = (0..grid.count())
        .into_par_iter()
        .map(|t| {
            let (x0, x1, y0, y1) = grid.bounds(t, cam);
            let list = &tiles[t];
            let n = ((x1 - x0) * (y1 - y0)) as usize;
            let mut res = TileResult {
                color: Vec::with_capacity(n),
                t: Vec::with_capacity(n),
                last: Vec::with_capacity(n),
                contrib: Vec::with_capacity(n),
                hits: vec![0; list.len()],
            };
            for py in y0..y1 {
                for px in x0..x1 {
                    let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                    let mut tr = 1.0;
                    let mut c = [0.0; 3];
                    let mut visited = 0;
                    let mut count = 0;
                    for (k, &si) in list.iter().enumerate() {
                        visited = k + 1;
                        let s = &splats[si as usize];
                        let Some(alpha) = splat_alpha(s, x, y) else {
                            continue;
                        };
                        for ch in 0..3 {
                            c[ch] += s.rgb[ch] * alpha * tr;
                        }
                        tr *= 1.0 - alpha;
                        count += 1;
                        res.hits[k] += 1;
                        if tr < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    for ch in 0..3 {
                        c[ch] += tr * bg[ch];
                    }
                    res.color.push(c);
                    res.t.push(tr);
                    res.last.push(visited as u32);
                    res.contrib.push(count);
                }
            }
            res
        })
        .collect();

    let (w, h) = (cam.width, cam.height);
    let npix = cam.pixel_count();
    let mut image = ImageF::new(w, h);
    let mut alpha = vec![0.0; npix];
    let mut contributors = vec![0; npix];
    let mut last = vec![0; npix];
    let mut final_t = vec![1.0; npix];
    let mut hits = vec![0u64; scene.len()];
    for (t, res) in results.iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(t, cam);
        let mut k = 0;
        for py in y0..y1 {
            for px in x0..x1 {
                let p = (py * w + px) as usize;
                image.set(px, py, res.color[k]);
                alpha[p] = 1.0 - res.t[k];
                final_t[p] = res.t[k];
                contributors[p] = res.contrib[k];
                last[p] = res.last[k];
                k += 1;
            }
        }
        for (&si, &count) in tiles[t].iter().zip(res.hits.iter()) {
            hits[splats[si as usize].source_index] += count as u64;
        }
    }
    let state = ForwardState {
        fingerprint: fingerprint(scene, cam, options),
        splats,
        inter,
        tiles,
        last,
        final_t,
        background: bg,
    };
    Ok((
        RenderOutput {
            image,
            alpha,
            contributors,
            hits,
        },
        state,
    ))
}

/// Opacity of splat `s` at pixel centre `(x, y)`, or `None` outside its footprint.
#[inline]
pub(crate) fn splat_alpha(s: &ProjectedSplat, x: f64, y: f64) -> Option<f64> {
    let dx = x - s.mean2d[0];
    let dy = y - s.mean2d[1];
    let [a, b, c] = s.conic;
    let power = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy;
    if !(power <= FOOTPRINT_POWER) {
        return None;
    }
    Some((s.opacity * (-power).exp()).min(MAX_ALPHA))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian, Mat3};

    fn camera() -> Camera {
        Camera::new(20.0, 20.0, 8.0, 8.0, 16, 16, Mat3::identity(), Vec3::zeros()).unwrap()
    }

    fn scene_of(gs: Vec<Gaussian>) -> SceneModel {
        SceneModel {
            gaussians: gs,
            mesh: None,
            sh_degree: 0,
        }
    }

    #[test]
    fn single_splat_at_pixel_centre() {
        // Mean lands exactly on the centre of pixel (7, 7).
        let g = Gaussian::isotropic(Vec3::new(-0.025, -0.025, 1.0), 0.05, 0.5, [1.0; 3], 0);
        let out = rasterize(&scene_of(vec![g]), &camera()).unwrap();
        let p = out.image.get(7, 7);
        for c in p {
            assert!((c - 0.5).abs() < 1e-12, "{c}");
        }
        assert!(out.hits[0] > 0);
    }

    #[test]
    fn two_coincident_splats() {
        let near = Gaussian::isotropic(Vec3::new(-0.025, -0.025, 1.0), 0.05, 0.5, [1.0; 3], 0);
        let mut far = Gaussian::isotropic(Vec3::new(-0.05, -0.05, 2.0), 0.1, 0.5, [0.0; 3], 0);
        far.sh[0] = crate::scene::sh::rgb_to_dc([0.0; 3]);
        // Store the far splat first: order must come from depth.
        let out = rasterize(&scene_of(vec![far, near]), &camera()).unwrap();
        for c in out.image.get(7, 7) {
            assert!((c - 0.5).abs() < 1e-12);
        }
        assert!((out.alpha[7 * 16 + 7] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_and_zero_opacity_give_background() {
        let opts = RenderOptions { background: [0.2, 0.4, 0.6] };
        let (out, _) = render_forward(&scene_of(vec![]), &camera(), &opts).unwrap();
        assert!(out.image.data.chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
        let mut g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.3, 0.5, [1.0; 3], 0);
        g.opacity_logit = f64::NEG_INFINITY;
        let scene = scene_of(vec![g]);
        // -inf is not finite; zero opacity must still be representable, so use a huge negative logit.
        assert!(matches!(render_forward(&scene, &camera(), &opts), Err(RasterError::NonFinite { index: 0 })));
        let mut scene = scene;
        scene.gaussians[0].opacity_logit = -1e4;
        let (out, _) = render_forward(&scene, &camera(), &opts).unwrap();
        assert!(out.image.data.chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
        assert!(out.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn non_finite_parameter_is_reported() {
        let mut gs = vec![Gaussian::isotropic(Vec3::new(0.0, 0.0, 1.0), 0.3, 0.5, [1.0; 3], 0); 3];
        gs[2].log_scale.y = f64::NAN;
        assert_eq!(rasterize(&scene_of(gs), &camera()).unwrap_err(), RasterError::NonFinite { index: 2 });
    }
}
