//! Optimisation loop: photometric loss, Adam, scheduled pruning and
//! densification, held-out evaluation and checkpoints.

mod checkpoint;
mod config;
mod report;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{
    decode_optimizer_state, encode_optimizer_state, read_optimizer_state, write_optimizer_state, OptimizerState,
    CHECKPOINT_MAGIC,
};
pub use config::{exponential_decay, LearningRates, TrainConfig};
pub use report::{CountRecord, EvalRecord, Timings, TrainEvent, TrainReport};

use crate::adaptive::{self, AdaptiveError};
use crate::image::{ImageError, ImageF};
use crate::io::compact::CompactError;
use crate::loss::{photometric_loss, ssim};
use crate::metrics::psnr;
use crate::optim::{row_len, Adam, StepRates};
use crate::raster::{rasterize_backward, render_forward, RasterError, RenderOptions};
use crate::scene::{Camera, SceneModel, Vec3};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("non-finite {what} at iteration {iter}")]
    NonFinite {
        iter: usize,
        what: &'static str,
        /// The scene before the failing step.
        last_good: Box<SceneModel>,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Compact(#[from] CompactError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Posed training images, in linear light.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageF>,
}

impl TrainData {
    pub fn new(cameras: Vec<Camera>, images: Vec<ImageF>) -> Result<Self, TrainError> {
        if cameras.len() != images.len() {
            return Err(TrainError::Data(format!("{} cameras but {} images", cameras.len(), images.len())));
        }
        for (i, (c, img)) in cameras.iter().zip(&images).enumerate() {
            if c.width != img.width || c.height != img.height {
                return Err(TrainError::Data(format!(
                    "view {i}: camera is {}x{} but image is {}x{}",
                    c.width, c.height, img.width, img.height
                )));
            }
        }
        Ok(Self { cameras, images })
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// `(train, test)` view indices; every `holdout_every`-th view from 0 is
    /// held out. `0` holds out nothing.
    pub fn split(&self, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| holdout_every == 0 || i % holdout_every != 0)
    }
}

/// Radius of the camera centres around their mean, padded by 10%.
pub fn scene_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let centres: Vec<Vec3> = cameras.iter().map(Camera::center).collect();
    let mean = centres.iter().sum::<Vec3>() / centres.len() as f64;
    let r = centres.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Mean display-space PSNR and SSIM of `scene` over the given views.
pub fn evaluate(scene: &SceneModel, data: &TrainData, views: &[usize], background: [f64; 3]) -> Result<(f64, f64), TrainError> {
    let options = RenderOptions { background };
    let (mut p, mut s) = (0.0, 0.0);
    for &v in views {
        let (out, _) = render_forward(scene, &data.cameras[v], &options)?;
        let a = out.image.to_srgb();
        let b = data.images[v].to_srgb();
        p += psnr(&a, &b)?;
        s += ssim(&a, &b)?;
    }
    let n = views.len().max(1) as f64;
    Ok((p / n, s / n))
}

pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a TrainData,
    scene: SceneModel,
    adam: Adam,
    iter: usize,
    report: TrainReport,
    train_views: Vec<usize>,
    test_views: Vec<usize>,
    extent: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: SceneModel, data: &'a TrainData, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let (train_views, test_views) = data.split(config.holdout_every);
        if train_views.len() < 2 {
            return Err(TrainError::Data(format!("need at least 2 training views, have {}", train_views.len())));
        }
        if scene.sh_degree != config.sh_degree {
            return Err(TrainError::Config(format!(
                "scene has SH degree {} but config asks for {}",
                scene.sh_degree, config.sh_degree
            )));
        }
        scene.validate().map_err(RasterError::from)?;
        let adam = Adam::new(scene.len(), scene.sh_degree);
        let mut report = TrainReport::default();
        report.counts.push(CountRecord {
            iter: 0,
            count: scene.len(),
            event: TrainEvent::Init,
        });
        Ok(Self {
            extent: scene_extent(&data.cameras),
            config,
            data,
            scene,
            adam,
            iter: 0,
            report,
            train_views,
            test_views,
        })
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn test_views(&self) -> &[usize] {
        &self.test_views
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.config.total_iters
    }

    /// Training view used at 1-based iteration `iter`: each epoch visits
    /// every training view once in a seeded random order.
    pub fn view_for(&self, iter: usize) -> usize {
        let n = self.train_views.len();
        let epoch = ((iter - 1) / n) as u64;
        let mut order = self.train_views.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        order[(iter - 1) % n]
    }

    pub fn rates_at(&self, iter: usize) -> StepRates {
        let lr = &self.config.lr;
        let total = self.config.total_iters;
        StepRates {
            position: exponential_decay(lr.position_init, lr.position_final, iter, total) * self.extent,
            logits: exponential_decay(lr.logits_init, lr.logits_final, iter, total),
            rotation: lr.rotation,
            scale: lr.scale,
            opacity: lr.opacity,
            sh_dc: lr.sh_dc,
            sh_rest: lr.sh_rest,
        }
    }

    /// One optimisation step plus any scheduled events. Returns the loss.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let it = self.iter + 1;
        let view = self.view_for(it);
        let cam = &self.data.cameras[view];
        let target = &self.data.images[view];
        let options = RenderOptions {
            background: self.config.background,
        };

        let t0 = Instant::now();
        let (out, state) = render_forward(&self.scene, cam, &options)?;
        let (loss, dl) = photometric_loss(&out.image, target, self.config.dssim_weight)?;
        self.report.timings.forward += t0.elapsed().as_secs_f64();
        if !loss.is_finite() {
            return Err(self.non_finite(it, "loss"));
        }

        let t1 = Instant::now();
        let grads = rasterize_backward(&self.scene, cam, &state, &dl)?;
        self.report.timings.backward += t1.elapsed().as_secs_f64();
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(self.non_finite(it, "gradient"));
        }
        let rates = self.rates_at(it);
        self.adam.update(&mut self.scene, &grads, &rates);
        self.scene.refresh_anchored_positions();
        self.iter = it;
        self.report.losses.push(loss);
        self.report.train_psnr.push(psnr(&out.image.to_srgb(), &target.to_srgb())?);

        let t2 = Instant::now();
        if self.config.prune_iters.contains(&it) {
            self.prune_event(it)?;
        }
        if self.config.densify_iters.contains(&it) {
            self.densify_event(it)?;
        }
        self.report.timings.adaptive += t2.elapsed().as_secs_f64();

        let eval_due = self.config.eval_every > 0 && it % self.config.eval_every == 0;
        if (eval_due || it == self.config.total_iters) && !self.test_views.is_empty() {
            let t3 = Instant::now();
            let (p, s) = evaluate(&self.scene, self.data, &self.test_views, self.config.background)?;
            self.report.evals.push(EvalRecord {
                iter: it,
                psnr: p,
                ssim: s,
                gaussians: self.scene.len(),
            });
            self.report.timings.eval += t3.elapsed().as_secs_f64();
            log::info!("iter {it}: psnr {p:.3} ssim {s:.4} gaussians {}", self.scene.len());
        }
        Ok(loss)
    }

    fn non_finite(&self, iter: usize, what: &'static str) -> TrainError {
        TrainError::NonFinite {
            iter,
            what,
            last_good: Box::new(self.scene.clone()),
        }
    }

    fn train_cameras(&self) -> Vec<Camera> {
        self.train_views.iter().map(|&v| self.data.cameras[v].clone()).collect()
    }

    fn prune_event(&mut self, it: usize) -> Result<(), TrainError> {
        let scores = adaptive::accumulate_importance(&self.scene, &self.train_cameras())?;
        let protect = if self.config.protect && self.scene.len() > self.config.knn {
            let positions: Vec<Vec3> = self.scene.gaussians.iter().map(|g| g.position).collect();
            Some(adaptive::curvature_field(&positions, self.config.knn, self.config.tau)?.protect)
        } else {
            None
        };
        let (scene, outcome) = adaptive::prune(&self.scene, &scores.scores, self.config.prune_ratio, protect.as_deref())?;
        self.adam.retain_rows(&outcome.kept);
        self.scene = scene;
        log::info!(
            "iter {it}: pruned {} of quota {} ({:?}), {} remain",
            outcome.removed.len(),
            outcome.quota,
            outcome.status,
            self.scene.len()
        );
        self.report.counts.push(CountRecord {
            iter: it,
            count: self.scene.len(),
            event: TrainEvent::Prune {
                removed: outcome.removed.len(),
                quota: outcome.quota,
            },
        });
        Ok(())
    }

    fn densify_event(&mut self, it: usize) -> Result<(), TrainError> {
        let added = if self.scene.len() > self.config.knn {
            let positions: Vec<Vec3> = self.scene.gaussians.iter().map(|g| g.position).collect();
            let (rho, _) = adaptive::local_curvature(&positions, self.config.knn)?;
            let seed = self.config.seed ^ (it as u64).wrapping_mul(0xd1b5_4a32_d192_ed03);
            let (scene, added) = adaptive::densify_low_curvature(&self.scene, &rho, self.config.tau, seed)?;
            self.scene = scene;
            self.adam.push_rows(added);
            added
        } else {
            log::warn!("iter {it}: too few Gaussians for curvature, densification skipped");
            0
        };
        self.report.counts.push(CountRecord {
            iter: it,
            count: self.scene.len(),
            event: TrainEvent::Densify { added },
        });
        Ok(())
    }

    /// Runs until `total_iters`.
    pub fn run(&mut self) -> Result<(), TrainError> {
        self.run_until(self.config.total_iters)
    }

    /// Runs until the iteration counter reaches `iter` (capped at the total).
    pub fn run_until(&mut self, iter: usize) -> Result<(), TrainError> {
        let start = Instant::now();
        let stop = iter.min(self.config.total_iters);
        while self.iter < stop {
            self.step()?;
        }
        self.report.timings.total += start.elapsed().as_secs_f64();
        Ok(())
    }

    pub fn into_parts(self) -> (SceneModel, TrainReport) {
        (self.scene, self.report)
    }

    pub fn optimizer_state(&self) -> OptimizerState {
        OptimizerState {
            iter: self.iter,
            adam: self.adam.clone(),
            report: self.report.clone(),
        }
    }

    /// Restores a trainer from a checkpointed scene and optimizer state.
    pub fn resume(scene: SceneModel, state: OptimizerState, data: &'a TrainData, config: TrainConfig) -> Result<Self, TrainError> {
        let mut t = Self::new(scene, data, config)?;
        if state.adam.len() != t.scene.len() || state.adam.stride != row_len(t.scene.sh_degree) {
            return Err(TrainError::Checkpoint(format!(
                "optimizer state has {} rows of {} values, scene needs {} rows of {}",
                state.adam.len(),
                state.adam.stride,
                t.scene.len(),
                row_len(t.scene.sh_degree)
            )));
        }
        if state.iter > t.config.total_iters {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint iteration {} exceeds total_iters {}",
                state.iter, t.config.total_iters
            )));
        }
        t.iter = state.iter;
        t.adam = state.adam;
        t.report = state.report;
        Ok(t)
    }
}

/// Trains `scene` to completion.
pub fn train(scene: SceneModel, data: &TrainData, config: TrainConfig) -> Result<(SceneModel, TrainReport), TrainError> {
    let mut t = Trainer::new(scene, data, config)?;
    t.run()?;
    Ok(t.into_parts())
}
