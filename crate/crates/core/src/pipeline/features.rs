use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Image, Matrix};

/// What the lattice is asked to upsample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "color-upsample")]
    Color,
    #[serde(rename = "flow-upsample")]
    Flow,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Color => "color-upsample",
            TaskKind::Flow => "flow-upsample",
        }
    }
}

/// Scale factors for the spatial and guidance basic features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub lambda_s: f64,
    pub lambda_i: f64,
    #[serde(default)]
    pub learn_lambda_s: bool,
}

impl ScaleConfig {
    pub fn new(lambda_s: f64, lambda_i: f64) -> Result<Self> {
        let s = Self { lambda_s, lambda_i, learn_lambda_s: false };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s > 0.0 && self.lambda_s.is_finite() && self.lambda_i > 0.0 && self.lambda_i.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale factors must be positive, got lambda_s={} lambda_i={}",
                self.lambda_s, self.lambda_i
            )));
        }
        Ok(())
    }

    /// Tuned defaults: colour 2x/4x/8x and flow upsampling.
    pub fn preset(kind: TaskKind, factor: usize) -> Option<Self> {
        let (s, i) = match (kind, factor) {
            (TaskKind::Color, 2) => (1.25, 5.0),
            (TaskKind::Color, 4) => (0.65, 5.0),
            (TaskKind::Color, 8) => (0.20, 7.5),
            (TaskKind::Flow, _) => (0.15, 70.0),
            _ => return None,
        };
        Some(Self { lambda_s: s, lambda_i: i, learn_lambda_s: false })
    }
}

/// Per-pixel `[x, y, guidance...]` with coordinates offset by `origin`
/// (`(row, column)` of the top-left pixel in the source image).
pub fn basic_features(guidance: &Image, origin: (usize, usize)) -> Matrix {
    let (h, w, g) = guidance.shape();
    let mut m = Matrix::zeros(h * w, g + 2);
    for y in 0..h {
        for x in 0..w {
            let row = m.row_mut(y * w + x);
            row[0] = (origin.1 + x) as f64;
            row[1] = (origin.0 + y) as f64;
            row[2..].copy_from_slice(guidance.pixel(y, x));
        }
    }
    m
}

/// Mean basic feature vector over all pixels of all images.
pub fn dataset_mean<'a>(guidances: impl IntoIterator<Item = &'a Image>) -> Result<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for g in guidances {
        let f = basic_features(g, (0, 0));
        if sum.is_empty() {
            sum = vec![0.0; f.cols()];
        } else if sum.len() != f.cols() {
            return Err(shape_err("guidance images with different channel counts"));
        }
        for p in 0..f.rows() {
            for (s, v) in sum.iter_mut().zip(f.row(p)) {
                *s += v;
            }
        }
        count += f.rows();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("dataset mean of an empty set".into()));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Subtracts `mean` from every row.
pub fn center_features(f: &Matrix, mean: &[f64]) -> Result<Matrix> {
    if mean.len() != f.cols() {
        return Err(shape_err(format!("mean has {} entries, features have {}", mean.len(), f.cols())));
    }
    let mut out = f.clone();
    for p in 0..out.rows() {
        for (v, m) in out.row_mut(p).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    Ok(out)
}

/// Multiplies the two spatial columns by `spatial` and the rest by `lambda_i`.
pub fn scale_features(centered: &Matrix, spatial: f64, lambda_i: f64) -> Matrix {
    let mut out = centered.clone();
    for p in 0..out.rows() {
        for (j, v) in out.row_mut(p).iter_mut().enumerate() {
            *v *= if j < 2 { spatial } else { lambda_i };
        }
    }
    out
}

/// Nearest-neighbour upsampling: output pixel `(i, j)` copies
/// `(i / factor, j / factor)`.
pub fn nn_upsample(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsampling factor must be positive".into()));
    }
    Ok(Image::from_fn(img.height() * factor, img.width() * factor, img.channels(), |y, x, c| {
        img.get(y / factor, x / factor, c)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(ScaleConfig::preset(TaskKind::Color, 4).unwrap().lambda_s, 0.65);
        assert_eq!(ScaleConfig::preset(TaskKind::Flow, 4).unwrap().lambda_i, 70.0);
        assert!(ScaleConfig::preset(TaskKind::Color, 3).is_none());
        assert!(ScaleConfig::new(0.0, 1.0).is_err());
    }

    #[test]
    fn basic_features_layout() {
        let g = Image::from_vec(1, 2, 1, vec![0.25, 0.75]).unwrap();
        let f = basic_features(&g, (3, 5));
        assert_eq!(f.row(0), &[5.0, 3.0, 0.25]);
        assert_eq!(f.row(1), &[6.0, 3.0, 0.75]);
    }

    #[test]
    fn block_replication() {
        let img = Image::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = nn_upsample(&img, 2).unwrap();
        assert_eq!(up.as_slice(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]);
        assert_eq!(nn_upsample(&img, 1).unwrap(), img);
    }
}
