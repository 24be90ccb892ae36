use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tetrasplat::synth::{Shape, SynthConfig};
use tetrasplat::train::TrainConfig;
use tetrasplat::vq::{DEFAULT_CODEBOOK_SIZE, DEFAULT_MAX_ITERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub shapes: Vec<String>,
    pub views: usize,
    pub resolution: u32,
    pub density: f64,
    pub sparse_points: usize,
    pub camera_distance: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            shapes: vec!["cube".into()],
            views: d.views,
            resolution: d.resolution,
            density: d.density,
            sparse_points: d.sparse_points,
            camera_distance: d.camera_distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressSection {
    pub codebook_size: usize,
    pub max_iters: usize,
}

impl Default for CompressSection {
    fn default() -> Self {
        Self {
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// The `--config` document. Relative paths resolve against the working
/// directory; unset input paths default to `<output_dir>/sparse` and
/// `<output_dir>/images`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sfm_dir: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub compress: CompressSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("tetrasplat-out"),
            sfm_dir: None,
            images_dir: None,
            synth: SynthSection::default(),
            train: TrainConfig::default(),
            compress: CompressSection::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub k: Option<usize>,
    pub prune_ratio: Option<f64>,
    pub tau: Option<f64>,
    pub codebook_size: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(o) = &overrides.output {
            config.output_dir = o.clone();
        }
        if let Some(k) = overrides.k {
            config.train.k = k;
        }
        if let Some(r) = overrides.prune_ratio {
            config.train.prune_ratio = r;
        }
        if let Some(t) = overrides.tau {
            config.train.tau = t;
        }
        if let Some(c) = overrides.codebook_size {
            config.compress.codebook_size = c;
        }
        config.train.seed = config.seed;
        config.train.validate()?;
        if config.compress.codebook_size == 0 {
            bail!("compress.codebook_size must be positive");
        }
        Ok(config)
    }

    pub fn sfm_dir(&self) -> PathBuf {
        self.sfm_dir.clone().unwrap_or_else(|| self.output_dir.join("sparse"))
    }

    pub fn images_dir(&self) -> PathBuf {
        self.images_dir.clone().unwrap_or_else(|| self.output_dir.join("images"))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        let shapes = s.shapes.iter().map(|n| n.parse::<Shape>()).collect::<Result<Vec<_>, _>>()?;
        Ok(SynthConfig {
            shapes,
            views: s.views,
            resolution: s.resolution,
            seed: self.seed,
            density: s.density,
            sparse_points: s.sparse_points,
            camera_distance: s.camera_distance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("seed = 1\nbogus = 2\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("[train]\nlearning_rate = 2\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("[compress]\ncodebook = 2\n").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: PipelineConfig = toml::from_str("seed = 9\n[train]\ntotal_iters = 50\nprune_iters = [10]\ndensify_iters = []\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.total_iters, 50);
        assert_eq!(c.train.k, TrainConfig::default().k);
        assert_eq!(c.compress, CompressSection::default());
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            seed: Some(4),
            k: Some(2),
            prune_ratio: Some(0.3),
            tau: Some(0.1),
            codebook_size: Some(16),
            output: Some("x".into()),
        };
        let c = PipelineConfig::load(None, &o).unwrap();
        assert_eq!((c.seed, c.train.seed, c.train.k), (4, 4, 2));
        assert_eq!((c.train.prune_ratio, c.train.tau, c.compress.codebook_size), (0.3, 0.1, 16));
        assert_eq!(c.sfm_dir(), PathBuf::from("x/sparse"));
    }

    #[test]
    fn shipped_config_parses() {
        let c: PipelineConfig = toml::from_str(include_str!("../../../configs/fixture.toml")).unwrap();
        c.train.validate().unwrap();
        assert_eq!(c.synth_config().unwrap().views, 20);
    }
}
