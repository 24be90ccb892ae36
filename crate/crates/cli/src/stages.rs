use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use serde_json::json;
use tetrasplat::adaptive::{accumulate_importance, curvature_field, prune};
use tetrasplat::io::colmap::{parse_colmap_text, SfmBundle};
use tetrasplat::io::compact::{load_compact, save_compact, CompactModel, Precision};
use tetrasplat::io::png::{read_png, write_png};
use tetrasplat::io::ScalarTable;
use tetrasplat::mesh::{init_gaussians_on_faces, write_mesh_text};
use tetrasplat::metrics::{psnr, ssim, PSNR_CAP};
use tetrasplat::pipeline::{load_views, mesh_from_bundle};
use tetrasplat::raster::{render_forward, RenderOptions};
use tetrasplat::scene::{Camera, SceneModel, Vec3};
use tetrasplat::synth::{generate, write_fixture};
use tetrasplat::train::{read_optimizer_state, write_optimizer_state, TrainReport, Trainer};
use tetrasplat::vq::{compression_report, quantize_scene, QuantizeConfig};

use crate::config::PipelineConfig;

pub const MESH: &str = "mesh.txt";
pub const INIT: &str = "init.ea3d";
pub const CHECKPOINT: &str = "checkpoint.ea3d";
pub const CHECKPOINT_STATE: &str = "checkpoint.state";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const PRUNED: &str = "pruned.ea3d";
pub const PRUNE_SCORES: &str = "prune_scores.csv";
pub const MODEL: &str = "model.ea3d";
pub const COMPRESSION: &str = "compression.json";
pub const RENDERS: &str = "renders";
pub const METRICS: &str = "metrics.json";

pub const METRICS_SCHEMA: &str = "tetrasplat-metrics/1";

fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what} `{}`; run `tetrasplat {producer}` first", path.display());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn ensure_output(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))
}

fn load_bundle(cfg: &PipelineConfig) -> Result<SfmBundle> {
    let dir = cfg.sfm_dir();
    require(&dir, "COLMAP model directory", "synth")?;
    parse_colmap_text(&dir).with_context(|| format!("reading COLMAP model in {}", dir.display()))
}

fn load_scene(path: &Path, what: &str, producer: &str) -> Result<SceneModel> {
    require(path, what, producer)?;
    let model = load_compact(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(model.to_scene())
}

fn save_raw(path: &Path, scene: &SceneModel) -> Result<()> {
    save_compact(path, &CompactModel::Raw(scene.clone()), Precision::F64).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `(name, camera)` for every view, in image-id order.
fn views(bundle: &SfmBundle) -> Result<Vec<(String, Camera)>> {
    bundle.images.values().map(|im| Ok((im.name.clone(), bundle.camera(im)?))).collect()
}

fn held_out(cfg: &PipelineConfig, n: usize, all: bool) -> Vec<usize> {
    let every = cfg.train.holdout_every;
    if all || every == 0 {
        (0..n).collect()
    } else {
        (0..n).filter(|i| i % every == 0).collect()
    }
}

pub fn synth(cfg: &PipelineConfig) -> Result<()> {
    let scene = generate(&cfg.synth_config()?)?;
    ensure_output(cfg)?;
    write_fixture(&scene, &cfg.output_dir)?;
    info!(
        "synth: {} views at {}x{}, {} sparse points, {} ground-truth Gaussians -> {}",
        scene.cameras.len(),
        cfg.synth.resolution,
        cfg.synth.resolution,
        scene.bundle.points.len(),
        scene.ground_truth.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

pub fn init(cfg: &PipelineConfig) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let mesh = mesh_from_bundle(&bundle).context("building the tetrahedral mesh")?;
    let scene = init_gaussians_on_faces(&mesh, cfg.train.k, cfg.train.sh_degree)?;
    ensure_output(cfg)?;
    write_text(&cfg.artifact(MESH), &write_mesh_text(&mesh))?;
    save_raw(&cfg.artifact(INIT), &scene)?;
    info!(
        "init: {} points -> {} tetrahedra, {} faces, {} Gaussians (k = {})",
        bundle.points.len(),
        mesh.tetrahedra.len(),
        mesh.faces.len(),
        scene.len(),
        cfg.train.k
    );
    Ok(())
}

/// Persisted reports leave out wall-clock timings so re-runs are byte-identical.
fn without_timings(report: &TrainReport) -> TrainReport {
    TrainReport {
        timings: Default::default(),
        ..report.clone()
    }
}

fn save_checkpoint(cfg: &PipelineConfig, trainer: &Trainer) -> Result<()> {
    save_raw(&cfg.artifact(CHECKPOINT), trainer.scene())?;
    let mut state = trainer.optimizer_state();
    state.report = without_timings(&state.report);
    write_optimizer_state(&cfg.artifact(CHECKPOINT_STATE), &state)?;
    Ok(())
}

pub fn train(cfg: &PipelineConfig, resume: bool, checkpoint_every: Option<usize>, until: Option<usize>) -> Result<()> {
    let bundle = load_bundle(cfg)?;
    let images = cfg.images_dir();
    require(&images, "image directory", "synth")?;
    let data = load_views(&bundle, &images).context("loading training views")?;
    let mut trainer = if resume {
        let scene = load_scene(&cfg.artifact(CHECKPOINT), "checkpoint", "train")?;
        let state_path = cfg.artifact(CHECKPOINT_STATE);
        require(&state_path, "optimizer state", "train")?;
        let state = read_optimizer_state(&state_path)?;
        info!("train: resuming at iteration {}", state.iter);
        Trainer::resume(scene, state, &data, cfg.train.clone())?
    } else {
        let scene = load_scene(&cfg.artifact(INIT), "initial scene", "init")?;
        Trainer::new(scene, &data, cfg.train.clone())?
    };
    ensure_output(cfg)?;
    let step = checkpoint_every.filter(|&n| n > 0).unwrap_or(cfg.train.total_iters);
    let stop = until.unwrap_or(cfg.train.total_iters).min(cfg.train.total_iters);
    while trainer.iteration() < stop {
        let next = ((trainer.iteration() / step + 1) * step).min(stop);
        if let Err(e) = trainer.run_until(next) {
            if let tetrasplat::train::TrainError::NonFinite { last_good, .. } = &e {
                let path = cfg.artifact("last_good.ea3d");
                save_raw(&path, last_good)?;
                log::error!("train: last good scene written to {}", path.display());
            }
            return Err(e.into());
        }
        save_checkpoint(cfg, &trainer)?;
        info!("train: checkpoint at iteration {}", trainer.iteration());
    }
    if !trainer.is_done() {
        info!("train: stopped at iteration {}; continue with --resume", trainer.iteration());
        return Ok(());
    }
    let report = trainer.report();
    let t = &report.timings;
    info!(
        "train: {:.1} s total (forward {:.1}, backward {:.1}, adaptive {:.1}, eval {:.1})",
        t.total, t.forward, t.backward, t.adaptive, t.eval
    );
    let persisted = without_timings(report);
    write_text(&cfg.artifact(TRAIN_LOG), &persisted.log_lines())?;
    let mut summary = persisted.summary_json();
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("timings");
    }
    write_json(&cfg.artifact(TRAIN_SUMMARY), &summary)?;
    if let Some(e) = report.last_eval() {
        info!("train: held-out PSNR {:.2} dB, SSIM {:.4}, {} Gaussians", e.psnr, e.ssim, e.gaussians);
    }
    Ok(())
}

pub fn prune_stage(cfg: &PipelineConfig) -> Result<()> {
    let scene = load_scene(&cfg.artifact(CHECKPOINT), "trained checkpoint", "train")?;
    let bundle = load_bundle(cfg)?;
    let all = views(&bundle)?;
    let test = held_out(cfg, all.len(), false);
    let cams: Vec<Camera> = all.into_iter().enumerate().filter(|(i, _)| !test.contains(i)).map(|(_, (_, c))| c).collect();
    let scores = accumulate_importance(&scene, &cams)?;
    let field = if cfg.train.protect && scene.len() > cfg.train.knn {
        let positions: Vec<Vec3> = scene.gaussians.iter().map(|g| g.position).collect();
        Some(curvature_field(&positions, cfg.train.knn, cfg.train.tau)?)
    } else {
        None
    };
    let (pruned, outcome) = prune(&scene, &scores.scores, cfg.train.prune_ratio, field.as_ref().map(|f| f.protect.as_slice()))?;
    ensure_output(cfg)?;
    save_raw(&cfg.artifact(PRUNED), &pruned)?;
    let mut kept = vec![0.0; scene.len()];
    outcome.kept.iter().for_each(|&i| kept[i] = 1.0);
    let mut table = ScalarTable::new()
        .with("importance", scores.scores.clone())
        .with("hits", scores.hits.iter().map(|&h| h as f64).collect());
    if let Some(f) = &field {
        table = table
            .with("curvature", f.rho.clone())
            .with("protected", f.protect.iter().map(|&p| p as u8 as f64).collect());
    }
    write_text(&cfg.artifact(PRUNE_SCORES), &table.with("kept", kept).to_csv()?)?;
    info!(
        "prune: removed {} of quota {} ({:?}); {} -> {} Gaussians",
        outcome.removed.len(),
        outcome.quota,
        outcome.status,
        scene.len(),
        pruned.len()
    );
    Ok(())
}

pub fn compress(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<()> {
    let path = input.unwrap_or_else(|| cfg.artifact(PRUNED));
    require(&path, "model to compress", "prune")?;
    let scene = match load_compact(&path).with_context(|| format!("reading {}", path.display()))? {
        CompactModel::Raw(s) => s,
        CompactModel::Quantized(_) => bail!("`{}` is already quantized", path.display()),
    };
    let qc = QuantizeConfig {
        max_iters: cfg.compress.max_iters,
        ..QuantizeConfig::uniform(cfg.compress.codebook_size, cfg.seed)
    };
    let q = quantize_scene(&scene, &qc)?;
    let report = compression_report(&scene, &q);
    ensure_output(cfg)?;
    let out = cfg.artifact(MODEL);
    save_compact(&out, &CompactModel::Quantized(q), Precision::F32).with_context(|| format!("writing {}", out.display()))?;
    write_json(&cfg.artifact(COMPRESSION), &report)?;
    info!(
        "compress: {} Gaussians, {} -> {} bytes (ratio {})",
        report.gaussians,
        report.raw_bytes,
        report.quantized_bytes,
        report.ratio.map_or("n/a".into(), |r| format!("{r:.4}"))
    );
    Ok(())
}

fn render_view(scene: &SceneModel, cam: &Camera, background: [f64; 3]) -> Result<tetrasplat::image::ImageF> {
    let (out, _) = render_forward(scene, cam, &RenderOptions { background })?;
    Ok(out.image.to_srgb())
}

pub fn render(cfg: &PipelineConfig, input: Option<PathBuf>) -> Result<()> {
    let path = input.unwrap_or_else(|| cfg.artifact(MODEL));
    let scene = load_scene(&path, "model to render", "compress")?;
    let bundle = load_bundle(cfg)?;
    let dir = cfg.artifact(RENDERS);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let all = views(&bundle)?;
    for (name, cam) in &all {
        let target = dir.join(name);
        write_png(&target, &render_view(&scene, cam, cfg.train.background)?)?;
    }
    info!("render: {} views of {} -> {}", all.len(), path.display(), dir.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct ViewMetrics {
    name: String,
    psnr: f64,
    ssim: f64,
}

/// PSNR and SSIM on held-out views, either of a model or of a directory of
/// PNG renders named like the source images.
pub fn eval(cfg: &PipelineConfig, input: Option<PathBuf>, renders: Option<PathBuf>, all_views: bool) -> Result<serde_json::Value> {
    let bundle = load_bundle(cfg)?;
    let images = cfg.images_dir();
    require(&images, "image directory", "synth")?;
    let all = views(&bundle)?;
    let selected = held_out(cfg, all.len(), all_views);
    let (source, scene) = match &renders {
        Some(dir) => {
            require(dir, "render directory", "render")?;
            (json!({ "kind": "renders", "path": dir }), None)
        }
        None => {
            let path = input.unwrap_or_else(|| cfg.artifact(MODEL));
            let scene = load_scene(&path, "model to evaluate", "compress")?;
            let bytes = fs::metadata(&path)?.len();
            (json!({ "kind": "model", "path": path, "bytes": bytes, "gaussians": scene.len() }), Some(scene))
        }
    };
    let mut per_view = Vec::new();
    for &i in &selected {
        let (name, cam) = &all[i];
        let target = read_png(&images.join(name))?;
        let rendered = match (&scene, &renders) {
            (Some(s), _) => render_view(s, cam, cfg.train.background)?,
            (None, Some(dir)) => {
                let p = dir.join(name);
                require(&p, "rendered view", "render")?;
                read_png(&p)?
            }
            (None, None) => unreachable!(),
        };
        per_view.push(ViewMetrics {
            name: name.clone(),
            psnr: psnr(&rendered, &target).with_context(|| format!("view {name}"))?,
            ssim: ssim(&rendered, &target).with_context(|| format!("view {name}"))?,
        });
    }
    let n = per_view.len().max(1) as f64;
    let doc = json!({
        "schema": METRICS_SCHEMA,
        "source": source,
        "views": per_view,
        "mean": {
            "psnr": per_view.iter().map(|v| v.psnr).sum::<f64>() / n,
            "ssim": per_view.iter().map(|v| v.ssim).sum::<f64>() / n,
        },
        "psnr_cap": PSNR_CAP,
    });
    ensure_output(cfg)?;
    write_json(&cfg.artifact(METRICS), &doc)?;
    Ok(doc)
}
