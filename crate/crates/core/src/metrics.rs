//! Evaluation metrics: PSNR, average end-point error and its restriction to
//! motion boundaries.

use crate::error::{shape_err, Error, Result};
use crate::io::FlowField;
use crate::tensor::Image;

/// Gradient-norm thresholds for the boundary masks.
pub const BOUNDARY_THRESHOLDS: [f64; 4] = [1.0, 3.0, 7.0, 10.0];

/// Peak signal-to-noise ratio for images in `[0, 1]`. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("psnr of {:?} and {:?}", a.shape(), b.shape())));
    }
    let n = a.as_slice().len();
    if n == 0 {
        return Err(Error::UndefinedMetric("psnr of empty images".into()));
    }
    let mse = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Dilation with a 3x3 structuring element.
    pub fn dilate(&self, element: StructuringElement) -> Mask {
        let (h, w) = (self.height as isize, self.width as isize);
        Mask::from_fn(self.height, self.width, |y, x| {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if element == StructuringElement::Cross && dy != 0 && dx != 0 {
                        continue;
                    }
                    let (sy, sx) = (y as isize + dy, x as isize + dx);
                    if sy >= 0 && sy < h && sx >= 0 && sx < w && self.get(sy as usize, sx as usize) {
                        return true;
                    }
                }
            }
            false
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StructuringElement {
    #[default]
    Square,
    Cross,
}

fn check_flow(pred: &FlowField, gt: &FlowField) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(shape_err(format!("flow shapes {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    if gt.channels() != 2 {
        return Err(shape_err(format!("flow needs 2 channels, got {}", gt.channels())));
    }
    Ok(())
}

/// Mean end-point error, optionally restricted to a mask.
pub fn aee(pred: &FlowField, gt: &FlowField, mask: Option<&Mask>) -> Result<f64> {
    check_flow(pred, gt)?;
    if let Some(m) = mask {
        if (m.height, m.width) != (gt.height(), gt.width()) {
            return Err(shape_err("mask size differs from flow"));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if mask.is_some_and(|m| !m.get(y, x)) {
                continue;
            }
            let (p, g) = (pred.pixel(y, x), gt.pixel(y, x));
            sum += ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("end-point error over an empty region".into()));
    }
    Ok(sum / count as f64)
}

fn derivative(len: usize, i: usize, at: impl Fn(usize) -> f64) -> f64 {
    if len < 2 {
        0.0
    } else if i == 0 {
        at(1) - at(0)
    } else if i == len - 1 {
        at(len - 1) - at(len - 2)
    } else {
        (at(i + 1) - at(i - 1)) / 2.0
    }
}

/// Frobenius norm of the spatial Jacobian of a flow field: central
/// differences inside, one-sided at the borders.
pub fn flow_gradient_norm(flow: &FlowField) -> Result<Image> {
    if flow.channels() != 2 {
        return Err(shape_err(format!("flow needs 2 channels, got {}", flow.channels())));
    }
    let (h, w) = (flow.height(), flow.width());
    Ok(Image::from_fn(h, w, 1, |y, x, _| {
        let mut s = 0.0;
        for c in 0..2 {
            let dx = derivative(w, x, |i| flow.get(y, i, c));
            let dy = derivative(h, y, |i| flow.get(i, x, c));
            s += dx * dx + dy * dy;
        }
        s.sqrt()
    }))
}

/// One dilated mask per entry of [`BOUNDARY_THRESHOLDS`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMaskSet {
    pub thresholds: Vec<f64>,
    pub masks: Vec<Mask>,
}

pub fn boundary_masks(gt: &FlowField, element: StructuringElement) -> Result<BoundaryMaskSet> {
    let norm = flow_gradient_norm(gt)?;
    let masks = BOUNDARY_THRESHOLDS
        .iter()
        .map(|&t| Mask::from_fn(gt.height(), gt.width(), |y, x| norm.get(y, x, 0) > t).dilate(element))
        .collect();
    Ok(BoundaryMaskSet { thresholds: BOUNDARY_THRESHOLDS.to_vec(), masks })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryAee {
    /// Mean over the thresholds whose mask is non-empty.
    pub value: f64,
    /// `(threshold, error)`; `None` where the mask was empty.
    pub per_threshold: Vec<(f64, Option<f64>)>,
}

impl BoundaryAee {
    pub fn skipped(&self) -> Vec<f64> {
        self.per_threshold.iter().filter(|(_, e)| e.is_none()).map(|(t, _)| *t).collect()
    }
}

pub fn baee(pred: &FlowField, gt: &FlowField) -> Result<BoundaryAee> {
    baee_with(pred, gt, StructuringElement::Square)
}

pub fn baee_with(pred: &FlowField, gt: &FlowField, element: StructuringElement) -> Result<BoundaryAee> {
    check_flow(pred, gt)?;
    let set = boundary_masks(gt, element)?;
    let mut per_threshold = Vec::with_capacity(set.masks.len());
    for (t, m) in set.thresholds.iter().zip(&set.masks) {
        let e = if m.is_empty() { None } else { Some(aee(pred, gt, Some(m))?) };
        per_threshold.push((*t, e));
    }
    let defined: Vec<f64> = per_threshold.iter().filter_map(|(_, e)| *e).collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric("ground truth has no motion boundaries at any threshold".into()));
    }
    let value = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(BoundaryAee { value, per_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = Image::from_vec(1, 2, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::from_vec(1, 2, 1, vec![0.6, 0.4]).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::zeros(2, 1, 1)).is_err());
    }

    #[test]
    fn three_four_five() {
        let gt = Image::zeros(3, 3, 2);
        let pred = Image::from_fn(3, 3, 2, |_, _, c| if c == 0 { 3.0 } else { 4.0 });
        assert_eq!(aee(&pred, &gt, None).unwrap(), 5.0);
        assert!(matches!(aee(&pred, &gt, Some(&Mask::new(3, 3))), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn constant_flow_has_no_boundaries() {
        let gt = Image::from_fn(6, 6, 2, |_, _, c| c as f64);
        assert!(matches!(baee(&gt, &gt), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn cross_dilation() {
        let m = Mask::from_fn(3, 3, |y, x| y == 1 && x == 1);
        assert_eq!(m.dilate(StructuringElement::Square).count(), 9);
        assert_eq!(m.dilate(StructuringElement::Cross).count(), 5);
    }
}
