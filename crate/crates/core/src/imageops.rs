//! Colour conversion and resampling.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Image;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Luma of an RGB image; single-channel input is returned unchanged.
///
/// Written relative to the red channel so neutral pixels map to themselves exactly.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => Ok(Image::from_fn(img.height(), img.width(), 1, |y, x, _| {
            let p = img.pixel(y, x);
            p[0] + LUMA[1] * (p[1] - p[0]) + LUMA[2] * (p[2] - p[0])
        })),
        c => Err(shape_err(format!("grayscale conversion needs 1 or 3 channels, got {c}"))),
    }
}

fn sample_axis(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resampling with half-pixel centres (corners not aligned).
pub fn bilinear_resize(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 || img.height() == 0 || img.width() == 0 {
        return Err(Error::InvalidArgument("cannot resize to or from an empty image".into()));
    }
    let rows: Vec<_> = (0..height).map(|y| sample_axis(y, img.height(), height)).collect();
    let cols: Vec<_> = (0..width).map(|x| sample_axis(x, img.width(), width)).collect();
    Ok(Image::from_fn(height, width, img.channels(), |y, x, c| {
        let (y0, y1, ty) = rows[y];
        let (x0, x1, tx) = cols[x];
        let top = img.get(y0, x0, c) * (1.0 - tx) + img.get(y0, x1, c) * tx;
        let bottom = img.get(y1, x0, c) * (1.0 - tx) + img.get(y1, x1, c) * tx;
        top * (1.0 - ty) + bottom * ty
    }))
}

/// Downsamples by an integer factor with [`bilinear_resize`].
pub fn downsample(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || !img.height().is_multiple_of(factor) || !img.width().is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is not divisible by factor {factor}",
            img.height(),
            img.width()
        )));
    }
    bilinear_resize(img, img.height() / factor, img.width() / factor)
}
