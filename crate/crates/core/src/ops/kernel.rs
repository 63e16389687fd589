use crate::error::{shape_err, Error, Result};
use crate::lattice::NeighborOffsets;

/// Gaussian weight of each neighborhood offset, 1 at the center and 1/2 one
/// hop away.
pub fn gaussian_taps(offsets: &NeighborOffsets) -> Vec<f64> {
    let d = offsets.dim() as f64;
    let hop2 = d * (d + 1.0);
    offsets
        .offsets()
        .iter()
        .map(|o| {
            let r2: f64 = o.iter().map(|&v| (v as f64) * (v as f64)).sum();
            (-std::f64::consts::LN_2 * r2 / hop2).exp()
        })
        .collect()
}

/// Per-channel lattice filter, shape `(c, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterKernel {
    channels: usize,
    taps: usize,
    weights: Vec<f64>,
}

impl FilterKernel {
    pub fn zeros(channels: usize, taps: usize) -> Self {
        Self { channels, taps, weights: vec![0.0; channels * taps] }
    }

    /// Center tap 1, all others 0.
    pub fn identity(channels: usize, taps: usize) -> Self {
        let mut k = Self::zeros(channels, taps);
        for c in 0..channels {
            k.weights[c * taps] = 1.0;
        }
        k
    }

    /// The same Gaussian on every channel.
    pub fn gaussian(channels: usize, offsets: &NeighborOffsets) -> Self {
        let taps = gaussian_taps(offsets);
        let n = taps.len();
        Self { channels, taps: n, weights: taps.repeat(channels) }
    }

    pub fn from_vec(channels: usize, taps: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != channels * taps {
            return Err(shape_err(format!(
                "kernel {channels}x{taps} needs {} weights, got {}",
                channels * taps,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("kernel weights must be finite".into()));
        }
        Ok(Self { channels, taps, weights })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.weights[c * self.taps..(c + 1) * self.taps]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

/// Strictly positive normalization filter, shape `(1, N)`, stored as
/// log-weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NormKernel {
    log_weights: Vec<f64>,
}

impl NormKernel {
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("normalization weights must be positive and finite".into()));
        }
        Ok(Self { log_weights: weights.iter().map(|w| w.ln()).collect() })
    }

    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("normalization log-weights must be finite".into()));
        }
        Ok(Self { log_weights })
    }

    pub fn gaussian(offsets: &NeighborOffsets) -> Self {
        Self { log_weights: gaussian_taps(offsets).iter().map(|w| w.ln()).collect() }
    }

    /// Center weight 1, others `e^-60` (effectively zero but still positive).
    pub fn identity(taps: usize) -> Self {
        let mut log_weights = vec![-60.0; taps];
        log_weights[0] = 0.0;
        Self { log_weights }
    }

    pub fn taps(&self) -> usize {
        self.log_weights.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_weights_mut(&mut self) -> &mut [f64] {
        &mut self.log_weights
    }

    /// Converts a gradient w.r.t. the weights into one w.r.t. the log-weights.
    pub fn log_gradient(&self, grad_weights: &[f64]) -> Vec<f64> {
        grad_weights.iter().zip(&self.log_weights).map(|(g, l)| g * l.exp()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::neighbor_offsets;

    #[test]
    fn gaussian_center_and_first_ring() {
        let off = neighbor_offsets(3, 1).unwrap();
        let taps = gaussian_taps(&off);
        assert_eq!(taps[0], 1.0);
        // single-hop offsets are the vectors n_k and their negations
        for (o, w) in off.offsets().iter().zip(&taps).skip(1) {
            let r2: i32 = o.iter().map(|v| v * v).sum();
            if r2 == 12 {
                assert!((w - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn norm_kernel_rejects_nonpositive() {
        assert!(NormKernel::from_weights(&[1.0, 0.0]).is_err());
        assert!(NormKernel::from_weights(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn norm_kernel_round_trips_weights() {
        let k = NormKernel::from_weights(&[1.0, 0.5, 2.0]).unwrap();
        let w = k.weights();
        assert!((w[1] - 0.5).abs() < 1e-15 && (w[2] - 2.0).abs() < 1e-15);
        assert_eq!(k.log_gradient(&[1.0, 1.0, 1.0]), w);
    }
}
