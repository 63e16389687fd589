use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{aee, psnr};
use crate::optim::{Group, Optimizer, Param};
use crate::tensor::Image;

use super::features::TaskKind;
use super::model::{GradientRequest, Model, SampleGradients};
use super::task::UpsampleTask;

/// Training schedule and which parameter groups learn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learn_embedding: bool,
    pub learn_kernels: bool,
    pub learn_lambda_s: bool,
    /// Keep the normalization kernel at its Gaussian initialization.
    pub gaussian_normalization: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            crop_height: 200,
            crop_width: 272,
            batch_size: 16,
            seed: 0,
            learn_embedding: true,
            learn_kernels: true,
            learn_lambda_s: false,
            gaussian_normalization: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.crop_height == 0 || self.crop_width == 0 {
            return Err(Error::Config("batch size and crop size must be positive".into()));
        }
        Ok(())
    }

    fn request(&self, model: &Model) -> GradientRequest {
        GradientRequest {
            embedding: self.learn_embedding && model.embed.is_some(),
            kernels: self.learn_kernels,
            lambda: self.learn_lambda_s,
        }
    }
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's crops.
    pub loss: f64,
    /// Mean PSNR (colour) or end-point error (flow) of the training crops.
    pub metric: f64,
    pub empty_cells: usize,
}

/// PSNR of a prediction clamped to `[0, 1]`.
pub fn clamped_psnr(pred: &Image, target: &Image) -> Result<f64> {
    psnr(&pred.map(|v| v.clamp(0.0, 1.0)), target)
}

fn sample_metric(kind: TaskKind, pred: &Image, target: &Image) -> Result<f64> {
    match kind {
        TaskKind::Color => clamped_psnr(pred, target),
        TaskKind::Flow => aee(pred, target, None),
    }
}

/// Crops for one epoch: a shuffled visiting order and, per visit, a window
/// aligned to the upsampling factor. Depends only on `(seed, epoch)`.
pub fn epoch_crops(data: &[UpsampleTask], cfg: &TrainConfig, epoch: usize) -> Result<Vec<UpsampleTask>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .map(|i| {
            let t = &data[i];
            let k = t.factor;
            let ch = (cfg.crop_height.min(t.height()) / k) * k;
            let cw = (cfg.crop_width.min(t.width()) / k) * k;
            if ch == 0 || cw == 0 {
                return Err(Error::InvalidArgument(format!("sample {i} is smaller than one low-resolution pixel")));
            }
            let y0 = k * rng.gen_range(0..=(t.height() - ch) / k);
            let x0 = k * rng.gen_range(0..=(t.width() - cw) / k);
            t.crop(y0, x0, ch, cw)
        })
        .collect()
}

/// Runs epochs `first..first + count`, updating `model` and `optimizer`.
pub fn train_epochs(
    model: &mut Model,
    optimizer: &mut Optimizer,
    data: &[UpsampleTask],
    cfg: &TrainConfig,
    first: usize,
    count: usize,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.iter().any(|t| t.target.is_none()) {
        return Err(Error::InvalidArgument("training samples need targets".into()));
    }
    let want = cfg.request(model);
    let mut curve = Vec::with_capacity(count);
    for epoch in first..first + count {
        let crops = epoch_crops(data, cfg, epoch)?;
        let (mut loss_sum, mut metric_sum, mut empty) = (0.0, 0.0, 0);
        for (b, batch) in crops.chunks(cfg.batch_size).enumerate() {
            let results: Vec<SampleGradients> =
                batch.par_iter().map(|t| model.loss_and_gradients(t, want)).collect::<Result<_>>()?;
            for (i, r) in results.iter().enumerate() {
                if !r.loss.is_finite() {
                    return Err(Error::NonFiniteLoss(format!(
                        "epoch {epoch}, batch {b}, sample {i}: loss {} ({} empty cells)",
                        r.loss, r.empty_cells
                    )));
                }
                loss_sum += r.loss;
                metric_sum += sample_metric(model.shape.kind, &r.prediction, batch[i].target.as_ref().unwrap())?;
                empty += r.empty_cells;
            }
            apply_batch(model, optimizer, cfg, want, &results)?;
        }
        let n = crops.len() as f64;
        curve.push(EpochRecord { epoch, loss: loss_sum / n, metric: metric_sum / n, empty_cells: empty });
    }
    Ok(curve)
}

fn mean_of<'a>(items: impl Iterator<Item = &'a [f64]>, len: usize, n: f64) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for g in items {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn apply_batch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    cfg: &TrainConfig,
    want: GradientRequest,
    results: &[SampleGradients],
) -> Result<()> {
    let n = results.len() as f64;
    if want.embedding {
        if let Some(net) = model.embed.as_mut() {
            for r in results {
                for c in &r.caches {
                    net.record_batch_stats(c);
                }
            }
        }
    }
    let kernel_grad = mean_of(results.iter().map(|r| r.kernel.as_slice()), model.kernel.as_slice().len(), n);
    let norm_grad = mean_of(results.iter().map(|r| r.norm_log.as_slice()), model.norm.taps(), n);
    let lambda_grad = [results.iter().map(|r| r.lambda).sum::<f64>() / n];
    let mut embed_flat = model.embed.as_ref().map(|e| e.params().flatten()).unwrap_or_default();
    let embed_grad = mean_of(results.iter().map(|r| r.embed.as_slice()), embed_flat.len(), n);

    let mut kernel = model.kernel.as_slice().to_vec();
    let mut norm = model.norm.log_weights().to_vec();
    let mut lambda = [model.lambda_mult];
    let mut params = Vec::new();
    if want.embedding {
        params.push(Param { name: "embed", group: Group::Embed, values: &mut embed_flat, grad: &embed_grad });
    }
    if want.lambda {
        params.push(Param { name: "lambda_mult", group: Group::Embed, values: &mut lambda, grad: &lambda_grad });
    }
    if want.kernels {
        params.push(Param { name: "kernel", group: Group::Kernel, values: &mut kernel, grad: &kernel_grad });
        if !cfg.gaussian_normalization {
            params.push(Param { name: "norm", group: Group::Kernel, values: &mut norm, grad: &norm_grad });
        }
    }
    if params.is_empty() {
        return Ok(());
    }
    optimizer.step(&mut params)?;
    if want.embedding {
        model.embed.as_mut().unwrap().params_mut().assign(&embed_flat)?;
    }
    if want.lambda {
        if lambda[0].is_nan() || lambda[0] <= 0.0 {
            return Err(Error::NonFiniteGradient(format!(
                "spatial scale multiplier left the positive range: {}",
                lambda[0]
            )));
        }
        model.lambda_mult = lambda[0];
    }
    if want.kernels {
        model.kernel.as_mut_slice().copy_from_slice(&kernel);
        model.norm.log_weights_mut().copy_from_slice(&norm);
    }
    Ok(())
}

/// Per-task evaluation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub psnr: Option<f64>,
    pub aee: Option<f64>,
    pub baee: Option<f64>,
    pub empty_cells: usize,
}

/// Evaluates `model` (eval mode) on every task with a target.
pub fn evaluate(model: &Model, tasks: &[UpsampleTask]) -> Result<Vec<TaskMetrics>> {
    tasks
        .par_iter()
        .map(|t| {
            let target =
                t.target.as_ref().ok_or_else(|| Error::InvalidArgument("evaluation task without target".into()))?;
            let pred = model.predict(t)?;
            Ok(match model.shape.kind {
                TaskKind::Color => TaskMetrics {
                    psnr: Some(clamped_psnr(&pred.output, target)?),
                    aee: None,
                    baee: None,
                    empty_cells: pred.empty_cells,
                },
                TaskKind::Flow => TaskMetrics {
                    psnr: None,
                    aee: Some(aee(&pred.output, target, None)?),
                    baee: match crate::metrics::baee(&pred.output, target) {
                        Ok(b) => Some(b.value),
                        Err(Error::UndefinedMetric(_)) => None,
                        Err(e) => return Err(e),
                    },
                    empty_cells: pred.empty_cells,
                },
            })
        })
        .collect()
}
