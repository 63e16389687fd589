//! Guided upsampling on top of the lattice filter: feature assembly, offset
//! prediction, training, scale search and datasets.

mod features;
mod gridsearch;
mod manifest;
mod model;
pub mod synth;
mod task;
mod train;

pub use features::{basic_features, center_features, dataset_mean, nn_upsample, scale_features, ScaleConfig, TaskKind};
pub use gridsearch::{grid_search_scales, GridCandidate, GridSearchResult};
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use model::{loss_and_grad, GradientRequest, Model, ModelShape, Prediction, SampleGradients};
pub use task::UpsampleTask;
pub use train::{clamped_psnr, epoch_crops, evaluate, train_epochs, EpochRecord, TaskMetrics, TrainConfig};
