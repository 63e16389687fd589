//! Convolutional feature embedding: three 3x3 convolutions with leaky ReLU
//! between them and a terminal batch normalization, with a hand-written
//! backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Image;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const HIDDEN_CHANNELS: usize = 15;

/// 3x3 convolution, stride 1, zero padding. Weights are `[out][in][3][3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    fn xavier(in_channels: usize, out_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = Self::xavier_bound(in_channels, out_channels);
        let weight = (0..out_channels * in_channels * 9).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { in_channels, out_channels, weight, bias: vec![0.0; out_channels] }
    }

    /// `sqrt(6 / (fan_in + fan_out))` with both fans counting the 3x3 taps.
    pub fn xavier_bound(in_channels: usize, out_channels: usize) -> f64 {
        (6.0 / ((in_channels * 9 + out_channels * 9) as f64)).sqrt()
    }

    #[inline]
    fn w(&self, o: usize, i: usize, dy: usize, dx: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * 3 + dy) * 3 + dx]
    }

    pub fn forward(&self, x: &Image) -> Result<Image> {
        if x.channels() != self.in_channels {
            return Err(shape_err(format!("conv expects {} channels, got {}", self.in_channels, x.channels())));
        }
        let (h, w) = (x.height(), x.width());
        let mut out = Image::zeros(h, w, self.out_channels);
        let oc = self.out_channels;
        let data = out.as_mut_slice();
        for y in 0..h {
            for xx in 0..w {
                let dst = &mut data[(y * w + xx) * oc..(y * w + xx + 1) * oc];
                dst.copy_from_slice(&self.bias);
                for dy in 0..3 {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..3 {
                        let sx = xx as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = x.pixel(sy as usize, sx as usize);
                        for (o, d) in dst.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for (i, &s) in src.iter().enumerate() {
                                acc += self.w(o, i, dy, dx) * s;
                            }
                            *d += acc;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns the input gradient and accumulates weight/bias gradients.
    fn backward(&self, x: &Image, g: &Image, gw: &mut [f64], gb: &mut [f64]) -> Image {
        let (h, w) = (x.height(), x.width());
        let mut gx = Image::zeros(h, w, self.in_channels);
        let ic = self.in_channels;
        for y in 0..h {
            for xx in 0..w {
                let go = g.pixel(y, xx);
                for (o, &gv) in go.iter().enumerate() {
                    gb[o] += gv;
                }
                for dy in 0..3 {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..3 {
                        let sx = xx as isize + dx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let (sy, sx) = (sy as usize, sx as usize);
                        let src = x.pixel(sy, sx);
                        let base = (sy * w + sx) * ic;
                        for (o, &gv) in go.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            for i in 0..ic {
                                let wi = ((o * ic + i) * 3 + dy) * 3 + dx;
                                gw[wi] += gv * src[i];
                                gx.as_mut_slice()[base + i] += gv * self.weight[wi];
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

/// Per-channel batch normalization over the spatial extent of one map.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: BN_EPS,
        }
    }
}

/// Shape of an embedding network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbedShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub batch_norm: bool,
}

/// Weights of the embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedNetParams {
    pub layers: Vec<Conv3x3>,
    pub bn: Option<BatchNorm>,
}

impl EmbedNetParams {
    /// Xavier-uniform weights, zero biases, `gamma = 1`, `beta = 0`.
    pub fn init(shape: EmbedShape, seed: u64) -> Result<Self> {
        if shape.in_channels == 0 || shape.out_channels == 0 {
            return Err(Error::InvalidArgument("embedding network needs at least one input and output channel".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![
            Conv3x3::xavier(shape.in_channels, HIDDEN_CHANNELS, &mut rng),
            Conv3x3::xavier(HIDDEN_CHANNELS, HIDDEN_CHANNELS, &mut rng),
            Conv3x3::xavier(HIDDEN_CHANNELS, shape.out_channels, &mut rng),
        ];
        let bn = shape.batch_norm.then(|| BatchNorm::new(shape.out_channels));
        Ok(Self { layers, bn })
    }

    pub fn shape(&self) -> EmbedShape {
        EmbedShape {
            in_channels: self.layers[0].in_channels,
            out_channels: self.layers[2].out_channels,
            batch_norm: self.bn.is_some(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>()
            + self.bn.as_ref().map_or(0, |b| 2 * b.gamma.len())
    }

    /// Learnable parameters in a fixed order: per layer weight then bias,
    /// then `gamma`, `beta`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        if let Some(bn) = &self.bn {
            v.extend_from_slice(&bn.gamma);
            v.extend_from_slice(&bn.beta);
        }
        v
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err(format!("{} values for {} parameters", flat.len(), self.num_params())));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        if let Some(bn) = &mut self.bn {
            bn.gamma.iter_mut().chain(bn.beta.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Activations kept by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct EmbedCache {
    generation: u64,
    input: Image,
    pre1: Image,
    act1: Image,
    pre2: Image,
    act2: Image,
    pre3: Image,
    normalized: Option<Image>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl EmbedCache {
    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }

    /// Inputs of the two LeakyReLUs.
    pub fn hidden_pre_activations(&self) -> [&Image; 2] {
        [&self.pre1, &self.pre2]
    }

    /// Output of the last convolution, before normalization.
    pub fn pre_norm(&self) -> &Image {
        &self.pre3
    }

    /// Normalized map before `gamma` / `beta`.
    pub fn normalized(&self) -> Option<&Image> {
        self.normalized.as_ref()
    }
}

/// The embedding network with its running statistics.
///
/// Parameter updates bump a generation counter; caches from an older
/// generation are refused by [`EmbedNet::backward`].
#[derive(Clone, Debug)]
pub struct EmbedNet {
    params: EmbedNetParams,
    generation: u64,
}

fn leaky(x: &Image) -> Image {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

impl EmbedNet {
    pub fn new(params: EmbedNetParams) -> Self {
        Self { params, generation: 0 }
    }

    pub fn init(shape: EmbedShape, seed: u64) -> Result<Self> {
        Ok(Self::new(EmbedNetParams::init(shape, seed)?))
    }

    pub fn params(&self) -> &EmbedNetParams {
        &self.params
    }

    /// Mutable access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut EmbedNetParams {
        self.generation += 1;
        &mut self.params
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Runs the network; in train mode also folds the batch statistics into
    /// the running statistics.
    pub fn forward(&mut self, x: &Image, mode: Mode) -> Result<(Image, Option<EmbedCache>)> {
        match mode {
            Mode::Eval => Ok((self.infer(x)?, None)),
            Mode::Train => {
                let (out, cache) = self.forward_train(x)?;
                self.record_batch_stats(&cache);
                Ok((out, Some(cache)))
            }
        }
    }

    /// Eval-mode forward using the running statistics.
    pub fn infer(&self, x: &Image) -> Result<Image> {
        let a1 = leaky(&self.params.layers[0].forward(x)?);
        let a2 = leaky(&self.params.layers[1].forward(&a1)?);
        let mut z = self.params.layers[2].forward(&a2)?;
        if let Some(bn) = &self.params.bn {
            let c = z.channels();
            for px in z.as_mut_slice().chunks_mut(c) {
                for ch in 0..c {
                    let xhat = (px[ch] - bn.running_mean[ch]) / (bn.running_var[ch] + bn.eps).sqrt();
                    px[ch] = bn.gamma[ch] * xhat + bn.beta[ch];
                }
            }
        }
        Ok(z)
    }

    /// Train-mode forward using the statistics of `x` itself. Does not touch
    /// the running statistics; see [`EmbedNet::record_batch_stats`].
    pub fn forward_train(&self, x: &Image) -> Result<(Image, EmbedCache)> {
        let pre1 = self.params.layers[0].forward(x)?;
        let act1 = leaky(&pre1);
        let pre2 = self.params.layers[1].forward(&act1)?;
        let act2 = leaky(&pre2);
        let pre3 = self.params.layers[2].forward(&act2)?;
        let c = pre3.channels();
        let n = (pre3.height() * pre3.width()) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for px in pre3.as_slice().chunks(c) {
            for ch in 0..c {
                mean[ch] += px[ch];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for px in pre3.as_slice().chunks(c) {
            for ch in 0..c {
                var[ch] += (px[ch] - mean[ch]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);

        let (out, normalized) = match &self.params.bn {
            None => (pre3.clone(), None),
            Some(bn) => {
                let mut xhat = pre3.clone();
                let mut out = pre3.clone();
                for (px, o) in xhat.as_mut_slice().chunks_mut(c).zip(out.as_mut_slice().chunks_mut(c)) {
                    for ch in 0..c {
                        px[ch] = (px[ch] - mean[ch]) / (var[ch] + bn.eps).sqrt();
                        o[ch] = bn.gamma[ch] * px[ch] + bn.beta[ch];
                    }
                }
                (out, Some(xhat))
            }
        };
        let cache = EmbedCache {
            generation: self.generation,
            input: x.clone(),
            pre1,
            act1,
            pre2,
            act2,
            pre3,
            normalized,
            batch_mean: mean,
            batch_var: var,
        };
        Ok((out, cache))
    }

    /// Exponential moving average of the batch statistics (momentum 0.9).
    pub fn record_batch_stats(&mut self, cache: &EmbedCache) {
        if let Some(bn) = &mut self.params.bn {
            for ch in 0..bn.gamma.len() {
                bn.running_mean[ch] = BN_MOMENTUM * bn.running_mean[ch] + (1.0 - BN_MOMENTUM) * cache.batch_mean[ch];
                bn.running_var[ch] = BN_MOMENTUM * bn.running_var[ch] + (1.0 - BN_MOMENTUM) * cache.batch_var[ch];
            }
        }
    }

    /// Gradients w.r.t. the flattened parameters (see
    /// [`EmbedNetParams::flatten`]) and w.r.t. the input map.
    pub fn backward(&self, cache: &EmbedCache, grad_out: &Image) -> Result<(Vec<f64>, Image)> {
        if cache.generation != self.generation {
            return Err(Error::InvalidState(format!(
                "cache from parameter generation {} used at generation {}",
                cache.generation, self.generation
            )));
        }
        if grad_out.shape() != cache.pre3.shape() {
            return Err(shape_err(format!(
                "output gradient {:?} vs output {:?}",
                grad_out.shape(),
                cache.pre3.shape()
            )));
        }
        let c = grad_out.channels();
        let n = (grad_out.height() * grad_out.width()) as f64;
        let mut g_gamma = vec![0.0; c];
        let mut g_beta = vec![0.0; c];
        let g_pre3 = match (&self.params.bn, &cache.normalized) {
            (Some(bn), Some(xhat)) => {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (g, xh) in grad_out.as_slice().chunks(c).zip(xhat.as_slice().chunks(c)) {
                    for ch in 0..c {
                        g_beta[ch] += g[ch];
                        g_gamma[ch] += g[ch] * xh[ch];
                    }
                }
                for ch in 0..c {
                    sum_g[ch] = g_beta[ch] * bn.gamma[ch];
                    sum_gx[ch] = g_gamma[ch] * bn.gamma[ch];
                }
                let mut out = grad_out.clone();
                for (o, xh) in out.as_mut_slice().chunks_mut(c).zip(xhat.as_slice().chunks(c)) {
                    for ch in 0..c {
                        let inv_std = 1.0 / (cache.batch_var[ch] + bn.eps).sqrt();
                        let gxh = o[ch] * bn.gamma[ch];
                        o[ch] = inv_std / n * (n * gxh - sum_g[ch] - xh[ch] * sum_gx[ch]);
                    }
                }
                out
            }
            _ => grad_out.clone(),
        };

        let layers = &self.params.layers;
        let zeros = |l: &Conv3x3| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]);
        let (mut gw3, mut gb3) = zeros(&layers[2]);
        let (mut gw2, mut gb2) = zeros(&layers[1]);
        let (mut gw1, mut gb1) = zeros(&layers[0]);
        let g_act2 = layers[2].backward(&cache.act2, &g_pre3, &mut gw3, &mut gb3);
        let g_pre2 = leaky_backward(&cache.pre2, &g_act2)?;
        let g_act1 = layers[1].backward(&cache.act1, &g_pre2, &mut gw2, &mut gb2);
        let g_pre1 = leaky_backward(&cache.pre1, &g_act1)?;
        let g_input = layers[0].backward(&cache.input, &g_pre1, &mut gw1, &mut gb1);
        let grads = [(gw1, gb1), (gw2, gb2), (gw3, gb3)];

        let mut flat = Vec::with_capacity(self.params.num_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        if self.params.bn.is_some() {
            flat.extend(g_gamma);
            flat.extend(g_beta);
        }
        Ok((flat, g_input))
    }
}

fn leaky_backward(pre: &Image, g: &Image) -> Result<Image> {
    pre.zip_map(g, |p, gv| if p > 0.0 { gv } else { LEAKY_SLOPE * gv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(bn: bool) -> EmbedShape {
        EmbedShape { in_channels: 1, out_channels: 2, batch_norm: bn }
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(EmbedNetParams::init(shape(true), 5).unwrap(), EmbedNetParams::init(shape(true), 5).unwrap());
        assert_ne!(EmbedNetParams::init(shape(true), 5).unwrap(), EmbedNetParams::init(shape(true), 6).unwrap());
    }

    #[test]
    fn xavier_bound_first_layer() {
        // fan_in = 1*9, fan_out = 15*9
        let bound = (6.0f64 / 144.0).sqrt();
        assert_eq!(Conv3x3::xavier_bound(1, 15), bound);
        let p = EmbedNetParams::init(shape(true), 1).unwrap();
        assert!(p.layers[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bn = p.bn.unwrap();
        assert!(bn.gamma.iter().all(|&g| g == 1.0) && bn.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net = EmbedNet::init(shape(true), 1).unwrap();
        let n = net.params().num_params();
        net.params_mut().assign(&vec![0.0; n]).unwrap();
        // gamma was zeroed too; restore it so only the pre-norm map is zero
        net.params_mut().bn.as_mut().unwrap().gamma = vec![1.0; 2];
        let x = Image::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64 / 16.0);
        let (out, cache) = net.forward(&x, Mode::Train).unwrap();
        assert!(cache.unwrap().pre_norm().as_slice().iter().all(|&v| v == 0.0));
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let net = EmbedNet::init(shape(true), 1).unwrap();
        assert!(matches!(net.infer(&Image::zeros(3, 3, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = EmbedNet::init(shape(true), 1).unwrap();
        let x = Image::from_fn(4, 4, 1, |y, x, _| (y + x) as f64);
        let (out, cache) = net.forward_train(&x).unwrap();
        net.params_mut();
        assert!(matches!(net.backward(&cache, &out), Err(Error::InvalidState(_))));
    }

    #[test]
    fn leaky_relu_backward_scales_negative_side() {
        let pre = Image::from_vec(1, 2, 1, vec![-1.0, 2.0]).unwrap();
        let g = Image::from_vec(1, 2, 1, vec![1.0, 1.0]).unwrap();
        assert_eq!(leaky_backward(&pre, &g).unwrap().as_slice(), &[0.2, 1.0]);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut net = EmbedNet::init(shape(true), 3).unwrap();
        let x = Image::from_fn(5, 5, 1, |y, x, _| ((y * 7 + x * 3) % 5) as f64 / 5.0);
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        let cache = cache.unwrap();
        let bn = net.params().bn.as_ref().unwrap();
        for ch in 0..2 {
            assert!((bn.running_mean[ch] - 0.1 * cache.batch_mean()[ch]).abs() < 1e-15);
            assert!((bn.running_var[ch] - (0.9 + 0.1 * cache.batch_var()[ch])).abs() < 1e-15);
        }
    }
}
