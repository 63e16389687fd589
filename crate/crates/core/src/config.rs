//! Run configuration file (TOML). Every hyperparameter has a named key; keys
//! left out take task-dependent defaults.
//!
//! ```toml
//! task = "color-upsample"
//! factor = 4
//!
//! [scale]
//! lambda_s = 0.65
//! lambda_i = 5.0
//!
//! [train]
//! epochs = 100
//!
//! [paths]
//! train_manifest = "train.toml"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimConfig;
use crate::pipeline::{ModelShape, ScaleConfig, TaskKind, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ScaleSection {
    pub lambda_s: Option<f64>,
    pub lambda_i: Option<f64>,
    pub learn_lambda_s: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_tilde: Option<usize>,
    pub neighborhood: usize,
    pub batch_norm: bool,
    pub embed_spatial: bool,
    pub offset_mode: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d_tilde: None, neighborhood: 1, batch_norm: true, embed_spatial: false, offset_mode: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub batch_size: usize,
    pub learn_embedding: bool,
    pub learn_kernels: bool,
    pub gaussian_normalization: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            crop_height: t.crop_height,
            crop_width: t.crop_width,
            batch_size: t.batch_size,
            learn_embedding: t.learn_embedding,
            learn_kernels: t.learn_kernels,
            gaussian_normalization: t.gaussian_normalization,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lambda_s: Option<Vec<f64>>,
    pub lambda_i: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub factor: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub scale: ScaleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub optim: OptimConfig,
    pub gridsearch: GridSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Color,
            factor: 4,
            seed: 0,
            threads: 0,
            scale: ScaleSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            optim: OptimConfig::default(),
            gridsearch: GridSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub task: TaskKind,
    pub factor: usize,
    pub threads: usize,
    pub shape: ModelShape,
    pub scale: ScaleConfig,
    pub train: TrainConfig,
    pub optim: OptimConfig,
    pub grid_lambda_s: Vec<f64>,
    pub grid_lambda_i: Vec<f64>,
    pub paths: PathsSection,
}

/// Default search grid; contains the tuned preset of each supported task.
pub fn default_grid(task: TaskKind) -> (Vec<f64>, Vec<f64>) {
    match task {
        TaskKind::Color => {
            (vec![0.1, 0.15, 0.2, 0.3, 0.45, 0.65, 0.9, 1.25, 1.75], vec![1.0, 2.5, 5.0, 7.5, 10.0, 15.0])
        }
        TaskKind::Flow => (vec![0.05, 0.1, 0.15, 0.25, 0.4], vec![10.0, 25.0, 50.0, 70.0, 100.0]),
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// Reads a config file; relative paths in `[paths]` are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.paths.train_manifest);
        fix(&mut cfg.paths.eval_manifest);
        fix(&mut cfg.paths.checkpoint);
        fix(&mut cfg.paths.log);
        fix(&mut cfg.paths.report);
        Ok(cfg)
    }

    pub fn channels(&self) -> (usize, usize) {
        match self.task {
            TaskKind::Color => (3, 1),
            TaskKind::Flow => (2, 3),
        }
    }

    /// Fills defaults and checks every precondition the modules impose.
    pub fn resolve(&self) -> Result<Resolved> {
        if self.factor == 0 {
            return Err(config_err("factor must be positive"));
        }
        let preset = ScaleConfig::preset(self.task, self.factor);
        let lambda_s = self.scale.lambda_s.or(preset.map(|p| p.lambda_s));
        let lambda_i = self.scale.lambda_i.or(preset.map(|p| p.lambda_i));
        let (lambda_s, lambda_i) = match (lambda_s, lambda_i) {
            (Some(s), Some(i)) => (s, i),
            _ => {
                return Err(config_err(format!(
                    "no default scales for {} at factor {}; set [scale] lambda_s and lambda_i",
                    self.task.name(),
                    self.factor
                )))
            }
        };
        let scale = ScaleConfig { lambda_s, lambda_i, learn_lambda_s: self.scale.learn_lambda_s };
        scale.validate().map_err(|e| config_err(e.to_string()))?;

        let (data_channels, guidance_channels) = self.channels();
        let mut shape = ModelShape::for_task(self.task, data_channels, guidance_channels);
        if let Some(d) = self.model.d_tilde {
            shape.d_tilde = d;
        }
        if let Some(o) = self.model.offset_mode {
            shape.offset_mode = o;
        }
        shape.neighborhood = self.model.neighborhood;
        shape.batch_norm = self.model.batch_norm;
        shape.embed_spatial = self.model.embed_spatial;
        shape.use_embedding = self.train.learn_embedding;
        shape.validate().map_err(|e| config_err(e.to_string()))?;

        let train = TrainConfig {
            epochs: self.train.epochs,
            crop_height: self.train.crop_height,
            crop_width: self.train.crop_width,
            batch_size: self.train.batch_size,
            seed: self.seed,
            learn_embedding: self.train.learn_embedding,
            learn_kernels: self.train.learn_kernels,
            learn_lambda_s: self.scale.learn_lambda_s,
            gaussian_normalization: self.train.gaussian_normalization,
        };
        train.validate()?;
        if !train.crop_height.is_multiple_of(self.factor) || !train.crop_width.is_multiple_of(self.factor) {
            return Err(config_err(format!(
                "crop {}x{} is not a multiple of factor {}",
                train.crop_height, train.crop_width, self.factor
            )));
        }
        if train.gaussian_normalization && !train.learn_kernels {
            return Err(config_err("gaussian_normalization only applies when kernels are learnt"));
        }
        self.optim.validate()?;

        let (gs, gi) = default_grid(self.task);
        let grid_lambda_s = self.gridsearch.lambda_s.clone().unwrap_or(gs);
        let grid_lambda_i = self.gridsearch.lambda_i.clone().unwrap_or(gi);
        if grid_lambda_s.is_empty() || grid_lambda_i.is_empty() {
            return Err(config_err("grid search lists must not be empty"));
        }
        if grid_lambda_s.iter().chain(&grid_lambda_i).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(config_err("grid search values must be positive"));
        }
        Ok(Resolved {
            task: self.task,
            factor: self.factor,
            threads: self.threads,
            shape,
            scale,
            train,
            optim: self.optim.clone(),
            grid_lambda_s,
            grid_lambda_i,
            paths: self.paths.clone(),
        })
    }
}
