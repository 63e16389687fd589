use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::features::{ScaleConfig, TaskKind};
use super::model::{Model, ModelShape};
use super::task::UpsampleTask;
use super::train::evaluate;

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub lambda_s: f64,
    pub lambda_i: f64,
    /// Mean PSNR (colour, higher is better) or AEE (flow, lower is better).
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best: ScaleConfig,
    /// Every candidate, ordered by `lambda_s` then `lambda_i`.
    pub table: Vec<GridCandidate>,
}

fn better(kind: TaskKind, a: f64, b: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return b.is_nan() && !a.is_nan();
    }
    match kind {
        TaskKind::Color => a > b,
        TaskKind::Flow => a < b,
    }
}

/// Evaluates every `(lambda_s, lambda_i)` pair with basic features and
/// Gaussian kernels and returns the best; ties go to the smaller `lambda_s`,
/// then the smaller `lambda_i`.
pub fn grid_search_scales(
    shape: ModelShape,
    mean: &[f64],
    tasks: &[UpsampleTask],
    lambda_s: &[f64],
    lambda_i: &[f64],
) -> Result<GridSearchResult> {
    if lambda_s.is_empty() || lambda_i.is_empty() {
        return Err(Error::InvalidArgument("grid search needs at least one value per scale".into()));
    }
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("grid search needs at least one sample".into()));
    }
    let mut pairs: Vec<(f64, f64)> = lambda_s.iter().flat_map(|&s| lambda_i.iter().map(move |&i| (s, i))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup();
    let basic = ModelShape { use_embedding: false, embed_spatial: false, ..shape };
    let table: Vec<GridCandidate> = pairs
        .par_iter()
        .map(|&(s, i)| {
            let model = Model::init(basic, ScaleConfig::new(s, i)?, mean.to_vec(), 0)?;
            let metrics = evaluate(&model, tasks)?;
            let values: Vec<f64> = metrics
                .iter()
                .map(|m| match shape.kind {
                    TaskKind::Color => m.psnr.unwrap_or(f64::NAN),
                    TaskKind::Flow => m.aee.unwrap_or(f64::NAN),
                })
                .collect();
            Ok(GridCandidate { lambda_s: s, lambda_i: i, metric: values.iter().sum::<f64>() / values.len() as f64 })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (j, c) in table.iter().enumerate().skip(1) {
        if better(shape.kind, c.metric, table[best].metric) {
            best = j;
        }
    }
    let best = ScaleConfig::new(table[best].lambda_s, table[best].lambda_i)?;
    Ok(GridSearchResult { best, table })
}
