use crate::embed::{EmbedCache, EmbedNet, EmbedShape};
use crate::error::{shape_err, Error, Result};
use crate::lattice::NeighborOffsets;
use crate::ops::{self, BackwardOptions, FilterKernel, NormKernel};
use crate::tensor::{DataMap, FeatureMap, Image, Matrix};

use super::features::{basic_features, center_features, nn_upsample, scale_features, ScaleConfig, TaskKind};
use super::task::UpsampleTask;

/// Architecture choices that fix the parameter shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub kind: TaskKind,
    pub data_channels: usize,
    pub guidance_channels: usize,
    /// Number of learnt feature channels.
    pub d_tilde: usize,
    /// Neighbourhood hop radius of the lattice filter.
    pub neighborhood: usize,
    /// Features come from the embedding network rather than the scaled
    /// guidance directly.
    pub use_embedding: bool,
    /// Feed the spatial coordinates through the embedding network too.
    pub embed_spatial: bool,
    pub batch_norm: bool,
    /// Filter `data - guidance` and add the high-resolution guidance back.
    pub offset_mode: bool,
}

impl ModelShape {
    /// Defaults for a task: `d_tilde` 1 for grey-guided colour, 3 otherwise;
    /// offset mode for colour only. The embedding is off; enable it with
    /// `use_embedding` and the network is initialized by [`Model::init`].
    pub fn for_task(kind: TaskKind, data_channels: usize, guidance_channels: usize) -> Self {
        Self {
            kind,
            data_channels,
            guidance_channels,
            d_tilde: if kind == TaskKind::Color && guidance_channels == 1 { 1 } else { 3 },
            neighborhood: 1,
            use_embedding: false,
            embed_spatial: false,
            batch_norm: true,
            offset_mode: kind == TaskKind::Color,
        }
    }

    pub fn lattice_dim(&self) -> usize {
        if self.use_embedding {
            self.d_tilde + 2
        } else {
            self.guidance_channels + 2
        }
    }

    pub fn embed_shape(&self) -> Option<EmbedShape> {
        self.use_embedding.then(|| EmbedShape {
            in_channels: self.guidance_channels + if self.embed_spatial { 2 } else { 0 },
            out_channels: self.d_tilde + if self.embed_spatial { 2 } else { 0 },
            batch_norm: self.batch_norm,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_channels == 0 || self.guidance_channels == 0 {
            return Err(Error::InvalidArgument("data and guidance need at least one channel".into()));
        }
        if self.use_embedding && self.d_tilde == 0 {
            return Err(Error::InvalidArgument("d_tilde must be positive".into()));
        }
        if self.embed_spatial && !self.use_embedding {
            return Err(Error::InvalidArgument("embed_spatial needs the embedding network".into()));
        }
        if self.offset_mode && self.guidance_channels != 1 && self.guidance_channels != self.data_channels {
            return Err(Error::InvalidArgument(format!(
                "offset mode needs 1 or {} guidance channels, got {}",
                self.data_channels, self.guidance_channels
            )));
        }
        Ok(())
    }
}

/// All learnable and fixed state needed to run the filter.
#[derive(Clone, Debug)]
pub struct Model {
    pub shape: ModelShape,
    pub scale: ScaleConfig,
    /// Learnable multiplier on `lambda_s` (1 unless refined).
    pub lambda_mult: f64,
    /// Dataset mean of the basic features `[x, y, guidance...]`.
    pub mean: Vec<f64>,
    pub embed: Option<EmbedNet>,
    pub kernel: FilterKernel,
    pub norm: NormKernel,
}

/// Output of [`Model::predict`].
#[derive(Clone, Debug)]
pub struct Prediction {
    pub output: Image,
    /// Output pixels that received no data; their filtered value is 0.
    pub empty_cells: usize,
}

/// Which parameter gradients [`Model::loss_and_gradients`] should produce.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GradientRequest {
    pub embedding: bool,
    pub kernels: bool,
    pub lambda: bool,
}

impl GradientRequest {
    pub fn any(&self) -> bool {
        self.embedding || self.kernels || self.lambda
    }
}

/// Loss, metric and parameter gradients of one sample.
#[derive(Clone, Debug)]
pub struct SampleGradients {
    pub loss: f64,
    pub prediction: Image,
    pub empty_cells: usize,
    pub kernel: Vec<f64>,
    /// With respect to the normalization log-weights.
    pub norm_log: Vec<f64>,
    pub embed: Vec<f64>,
    pub lambda: f64,
    /// Train-mode embedding caches (input side, output side).
    pub caches: Vec<EmbedCache>,
}

struct FeatureCache {
    height: usize,
    width: usize,
    centered: Matrix,
    embed: Option<EmbedCache>,
}

fn image_to_matrix(img: Image) -> Matrix {
    img.to_points()
}

impl Model {
    /// Gaussian filter and normalization kernels, Xavier-initialized embedding.
    pub fn init(shape: ModelShape, scale: ScaleConfig, mean: Vec<f64>, seed: u64) -> Result<Self> {
        shape.validate()?;
        scale.validate()?;
        if mean.len() != shape.guidance_channels + 2 {
            return Err(shape_err(format!(
                "feature mean has {} entries, expected {}",
                mean.len(),
                shape.guidance_channels + 2
            )));
        }
        let offsets = NeighborOffsets::new(shape.lattice_dim(), shape.neighborhood as isize)?;
        let embed = shape.embed_shape().map(|s| EmbedNet::init(s, seed)).transpose()?;
        Ok(Self {
            shape,
            scale,
            lambda_mult: 1.0,
            mean,
            embed,
            kernel: FilterKernel::gaussian(shape.data_channels, &offsets),
            norm: NormKernel::gaussian(&offsets),
        })
    }

    pub fn offsets(&self) -> Result<NeighborOffsets> {
        NeighborOffsets::new(self.shape.lattice_dim(), self.shape.neighborhood as isize)
    }

    /// Effective spatial scale `lambda_s * lambda_mult`.
    pub fn spatial_scale(&self) -> f64 {
        self.scale.lambda_s * self.lambda_mult
    }

    fn check_guidance(&self, guidance: &Image) -> Result<()> {
        if guidance.channels() != self.shape.guidance_channels {
            return Err(shape_err(format!(
                "model expects {} guidance channels, got {}",
                self.shape.guidance_channels,
                guidance.channels()
            )));
        }
        Ok(())
    }

    /// Lattice features of a guidance map (embedding in eval mode).
    pub fn features(&self, guidance: &Image, origin: (usize, usize)) -> Result<FeatureMap> {
        Ok(self.features_impl(guidance, origin, false)?.0)
    }

    fn features_impl(
        &self,
        guidance: &Image,
        origin: (usize, usize),
        train: bool,
    ) -> Result<(FeatureMap, FeatureCache)> {
        self.check_guidance(guidance)?;
        let (h, w) = (guidance.height(), guidance.width());
        let centered = center_features(&basic_features(guidance, origin), &self.mean)?;
        let scaled = scale_features(&centered, self.spatial_scale(), self.scale.lambda_i);
        let mut cache = FeatureCache { height: h, width: w, centered, embed: None };
        let net = match &self.embed {
            None => return Ok((scaled, cache)),
            Some(net) => net,
        };
        let phi_input = if self.shape.embed_spatial { scaled.clone() } else { scaled.columns(2..scaled.cols()) };
        let phi_input = Image::from_points(h, w, phi_input)?;
        let phi = if train {
            let (out, c) = net.forward_train(&phi_input)?;
            cache.embed = Some(c);
            out
        } else {
            net.infer(&phi_input)?
        };
        let phi = image_to_matrix(phi);
        let features = if self.shape.embed_spatial { phi } else { Matrix::hcat(&[&scaled.columns(0..2), &phi])? };
        Ok((features, cache))
    }

    /// Gradients of the features w.r.t. the embedding parameters and the
    /// spatial multiplier.
    fn features_backward(
        &self,
        cache: &FeatureCache,
        grad: &FeatureMap,
        want_embed: bool,
    ) -> Result<(Option<Vec<f64>>, f64)> {
        let spatial = self.scale.lambda_s;
        let lambda_from = |g: &Matrix| -> f64 {
            (0..g.rows()).map(|p| (0..2).map(|j| g.get(p, j) * spatial * cache.centered.get(p, j)).sum::<f64>()).sum()
        };
        match (&self.embed, &cache.embed) {
            (Some(net), Some(ec)) if want_embed || self.shape.embed_spatial => {
                let phi_grad = if self.shape.embed_spatial { grad.clone() } else { grad.columns(2..grad.cols()) };
                let phi_grad = Image::from_points(cache.height, cache.width, phi_grad)?;
                let (g_params, g_input) = net.backward(ec, &phi_grad)?;
                let g_lambda =
                    if self.shape.embed_spatial { lambda_from(&g_input.to_points()) } else { lambda_from(grad) };
                Ok((Some(g_params), g_lambda))
            }
            _ if self.shape.embed_spatial => {
                Err(Error::InvalidState("spatial scale gradient through a frozen embedding is not supported".into()))
            }
            _ => Ok((None, lambda_from(grad))),
        }
    }

    fn prepare(&self, task: &UpsampleTask) -> Result<(DataMap, Image, Option<Image>)> {
        if task.lowres.channels() != self.shape.data_channels {
            return Err(shape_err(format!(
                "model expects {} data channels, got {}",
                self.shape.data_channels,
                task.lowres.channels()
            )));
        }
        self.check_guidance(&task.guidance)?;
        let k = task.factor;
        let data_up = nn_upsample(&task.lowres, k)?;
        let guide_up = nn_upsample(&task.lowres_guidance, k)?;
        let c = self.shape.data_channels;
        let widen = |g: &Image| if g.channels() == c { Ok(g.clone()) } else { g.broadcast(c) };
        if self.shape.offset_mode {
            let offsets = data_up.zip_map(&widen(&guide_up)?, |a, b| a - b)?;
            Ok((offsets.to_points(), guide_up, Some(widen(&task.guidance)?)))
        } else {
            Ok((data_up.to_points(), guide_up, None))
        }
    }

    fn finish(&self, task: &UpsampleTask, out: DataMap, base: &Option<Image>) -> Result<Image> {
        let img = Image::from_points(task.height(), task.width(), out)?;
        match base {
            Some(b) => img.zip_map(b, |a, b| a + b),
            None => Ok(img),
        }
    }

    /// Input-side and output-side lattice features of a task.
    pub fn lattice_features(&self, task: &UpsampleTask, batch_stats: bool) -> Result<(FeatureMap, FeatureMap)> {
        let (_, guide_up, _) = self.prepare(task)?;
        let f_in = self.features_impl(&guide_up, task.origin, batch_stats)?.0;
        let f_out = self.features_impl(&task.guidance, task.origin, batch_stats)?.0;
        Ok((f_in, f_out))
    }

    /// High-resolution prediction (embedding in eval mode).
    pub fn predict(&self, task: &UpsampleTask) -> Result<Prediction> {
        let (v, guide_up, base) = self.prepare(task)?;
        let f_in = self.features(&guide_up, task.origin)?;
        let f_out = self.features(&task.guidance, task.origin)?;
        let plan = ops::build_plan(&f_in, &f_out, self.shape.neighborhood)?;
        let fwd = ops::forward(&plan, &v, &self.kernel, &self.norm)?;
        Ok(Prediction { output: self.finish(task, fwd.output, &base)?, empty_cells: fwd.empty_cells })
    }

    /// Loss of one sample: mean squared error for colour, mean end-point
    /// error for flow. `batch_stats` selects train-mode normalization in the
    /// embedding network.
    pub fn loss(&self, task: &UpsampleTask, batch_stats: bool) -> Result<f64> {
        Ok(self.run(task, GradientRequest::default(), batch_stats)?.loss)
    }

    /// Forward pass, loss and the requested gradients. The embedding network
    /// runs in train mode exactly when its gradient is requested.
    pub fn loss_and_gradients(&self, task: &UpsampleTask, want: GradientRequest) -> Result<SampleGradients> {
        self.run(task, want, want.embedding && self.embed.is_some())
    }

    fn run(&self, task: &UpsampleTask, want: GradientRequest, batch_stats: bool) -> Result<SampleGradients> {
        let target =
            task.target.as_ref().ok_or_else(|| Error::InvalidArgument("training task without target".into()))?;
        let (v, guide_up, base) = self.prepare(task)?;
        let (f_in, c_in) = self.features_impl(&guide_up, task.origin, batch_stats)?;
        let (f_out, c_out) = self.features_impl(&task.guidance, task.origin, batch_stats)?;
        let plan = ops::build_plan(&f_in, &f_out, self.shape.neighborhood)?;
        let fwd = ops::forward(&plan, &v, &self.kernel, &self.norm)?;
        let prediction = self.finish(task, fwd.output, &base)?;
        let (loss, grad) = loss_and_grad(self.shape.kind, &prediction, target)?;

        let taps = self.kernel.taps();
        let mut out = SampleGradients {
            loss,
            prediction,
            empty_cells: fwd.empty_cells,
            kernel: vec![0.0; self.shape.data_channels * taps],
            norm_log: vec![0.0; taps],
            embed: Vec::new(),
            lambda: 0.0,
            caches: c_in.embed.iter().chain(c_out.embed.iter()).cloned().collect(),
        };
        if !want.any() || !loss.is_finite() {
            return Ok(out);
        }
        let grads = ops::backward(
            &plan,
            &v,
            &self.kernel,
            &self.norm,
            &fwd.cache,
            &grad.to_points(),
            BackwardOptions::default(),
        )?;
        if want.kernels {
            out.kernel = grads.kernel;
            out.norm_log = self.norm.log_gradient(&grads.norm_kernel);
        }
        if want.embedding || want.lambda {
            let (e_in, l_in) = self.features_backward(&c_in, &grads.input_features, want.embedding)?;
            let (e_out, l_out) = self.features_backward(&c_out, &grads.output_features, want.embedding)?;
            out.lambda = l_in + l_out;
            if let (true, Some(a), Some(b)) = (want.embedding, e_in, e_out) {
                out.embed = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            }
        }
        Ok(out)
    }
}

/// Loss and its gradient w.r.t. the prediction.
pub fn loss_and_grad(kind: TaskKind, pred: &Image, target: &Image) -> Result<(f64, Image)> {
    if pred.shape() != target.shape() {
        return Err(shape_err(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    match kind {
        TaskKind::Color => {
            let n = pred.as_slice().len() as f64;
            let loss = pred.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
            Ok((loss, pred.zip_map(target, |a, b| 2.0 * (a - b) / n)?))
        }
        TaskKind::Flow => {
            let c = pred.channels();
            let n = (pred.height() * pred.width()) as f64;
            let mut grad = Image::zeros(pred.height(), pred.width(), c);
            let mut loss = 0.0;
            for ((p, t), g) in
                pred.as_slice().chunks(c).zip(target.as_slice().chunks(c)).zip(grad.as_mut_slice().chunks_mut(c))
            {
                let e = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                loss += e;
                if e > 0.0 {
                    for i in 0..c {
                        g[i] = (p[i] - t[i]) / (e * n);
                    }
                }
            }
            Ok((loss / n, grad))
        }
    }
}
