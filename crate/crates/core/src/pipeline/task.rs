use crate::error::{shape_err, Error, Result};
use crate::imageops::{downsample, to_grayscale};
use crate::tensor::Image;

/// One guided upsampling problem: low-resolution data plus guidance at both
/// resolutions, and optionally the high-resolution target.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleTask {
    pub lowres: Image,
    pub lowres_guidance: Image,
    pub guidance: Image,
    pub factor: usize,
    pub target: Option<Image>,
    /// `(row, column)` of this task's top-left pixel in its source image.
    pub origin: (usize, usize),
}

impl UpsampleTask {
    pub fn new(lowres: Image, lowres_guidance: Image, guidance: Image, target: Option<Image>) -> Result<Self> {
        let (h, w) = (lowres.height(), lowres.width());
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("empty low-resolution input".into()));
        }
        if !guidance.height().is_multiple_of(h) || !guidance.width().is_multiple_of(w) {
            return Err(Error::InvalidArgument(format!(
                "guidance {}x{} is not an integer multiple of input {h}x{w}",
                guidance.height(),
                guidance.width()
            )));
        }
        let factor = guidance.height() / h;
        if guidance.width() / w != factor {
            return Err(Error::InvalidArgument("horizontal and vertical factors differ".into()));
        }
        if (lowres_guidance.height(), lowres_guidance.width()) != (h, w)
            || lowres_guidance.channels() != guidance.channels()
        {
            return Err(shape_err("low-resolution guidance does not match the input"));
        }
        if let Some(t) = &target {
            if (t.height(), t.width(), t.channels()) != (guidance.height(), guidance.width(), lowres.channels()) {
                return Err(shape_err(format!("target {:?} does not match task", t.shape())));
            }
        }
        Ok(Self { lowres, lowres_guidance, guidance, factor, target, origin: (0, 0) })
    }

    /// Builds a task by bilinearly downsampling a high-resolution target and
    /// its guidance.
    pub fn from_highres(target: Image, guidance: Image, factor: usize) -> Result<Self> {
        if (target.height(), target.width()) != (guidance.height(), guidance.width()) {
            return Err(shape_err("target and guidance sizes differ"));
        }
        let lowres = downsample(&target, factor)?;
        let lowres_guidance = downsample(&guidance, factor)?;
        Self::new(lowres, lowres_guidance, guidance, Some(target))
    }

    /// Colour task guided by the luma of `rgb`.
    pub fn from_rgb(rgb: Image, factor: usize) -> Result<Self> {
        let gray = to_grayscale(&rgb)?;
        Self::from_highres(rgb, gray, factor)
    }

    pub fn height(&self) -> usize {
        self.guidance.height()
    }

    pub fn width(&self) -> usize {
        self.guidance.width()
    }

    /// Sub-task covering high-resolution rows `y0..y0+h` and columns
    /// `x0..x0+w`; all four numbers must be multiples of the factor.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let k = self.factor;
        if !y0.is_multiple_of(k)
            || !x0.is_multiple_of(k)
            || !h.is_multiple_of(k)
            || !w.is_multiple_of(k)
            || h == 0
            || w == 0
        {
            return Err(Error::InvalidArgument(format!("crop ({y0},{x0},{h},{w}) is not aligned to factor {k}")));
        }
        Ok(Self {
            lowres: self.lowres.crop(y0 / k, x0 / k, h / k, w / k)?,
            lowres_guidance: self.lowres_guidance.crop(y0 / k, x0 / k, h / k, w / k)?,
            guidance: self.guidance.crop(y0, x0, h, w)?,
            factor: k,
            target: self.target.as_ref().map(|t| t.crop(y0, x0, h, w)).transpose()?,
            origin: (self.origin.0 + y0, self.origin.1 + x0),
        })
    }
}
