//! Splat, convolve and slice on the permutohedral lattice, with a learnt
//! normalization pass and analytic gradients for data, kernels and both
//! feature sets.

mod dense;
mod kernel;
mod plan;

pub use dense::{dense_reference_forward, DENSE_SIZE_LIMIT};
pub use kernel::{gaussian_taps, FilterKernel, NormKernel};
pub use plan::{LatticePlan, PointRecords};

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{DataMap, FeatureMap, Matrix};
use plan::ABSENT;

/// Normalizer values below this are treated as empty cells.
pub const EMPTY_CELL_THRESHOLD: f64 = 1e-12;

/// Builds a plan over `f_in` / `f_out` with neighborhood size `s`.
pub fn build_plan(f_in: &FeatureMap, f_out: &FeatureMap, s: usize) -> Result<LatticePlan> {
    LatticePlan::build(f_in, f_out, s)
}

fn gather_points(records: &PointRecords, values: &Matrix, m: usize) -> Matrix {
    let c = values.cols();
    let mut out = Matrix::zeros(m, c);
    if c == 0 {
        return out;
    }
    out.as_mut_slice().par_chunks_mut(c).enumerate().for_each(|(slot, dst)| {
        for &(p, k) in records.gather_range(slot) {
            let w = records.bary(p as usize)[k as usize];
            for (o, v) in dst.iter_mut().zip(values.row(p as usize)) {
                *o += w * v;
            }
        }
    });
    out
}

/// `v_L = Σ_i b_i v_i` over the inputs splatting onto each corner.
pub fn splat(plan: &LatticePlan, v: &DataMap) -> Result<Matrix> {
    if v.rows() != plan.input.len() {
        return Err(shape_err(format!("{} data rows for {} input points", v.rows(), plan.input.len())));
    }
    Ok(gather_points(&plan.input, v, plan.lattice_len()))
}

/// Splat of `w` using the output-side enclosures; the adjoint of [`slice`].
pub fn splat_outputs(plan: &LatticePlan, w: &DataMap) -> Result<Matrix> {
    if w.rows() != plan.output.len() {
        return Err(shape_err(format!("{} rows for {} output points", w.rows(), plan.output.len())));
    }
    Ok(gather_points(&plan.output, w, plan.lattice_len()))
}

fn check_lattice_values(plan: &LatticePlan, values: &Matrix) -> Result<()> {
    if values.rows() != plan.lattice_len() {
        return Err(shape_err(format!("{} lattice rows for {} allocated corners", values.rows(), plan.lattice_len())));
    }
    Ok(())
}

/// Per-channel correlation over the canonical neighborhood; absent corners
/// contribute zero.
pub fn convolve(plan: &LatticePlan, values: &Matrix, kernel: &FilterKernel) -> Result<Matrix> {
    check_lattice_values(plan, values)?;
    if kernel.channels() != values.cols() || kernel.taps() != plan.taps() {
        return Err(shape_err(format!(
            "kernel {}x{} does not fit {} channels and {} taps",
            kernel.channels(),
            kernel.taps(),
            values.cols(),
            plan.taps()
        )));
    }
    Ok(convolve_raw(plan, values, |ch| kernel.channel(ch), false))
}

/// Convolution with per-channel weights; `transpose` runs the adjoint by
/// walking each offset backwards.
fn convolve_raw<'a>(
    plan: &LatticePlan,
    values: &Matrix,
    weights: impl Fn(usize) -> &'a [f64] + Sync,
    transpose: bool,
) -> Matrix {
    let c = values.cols();
    let taps = plan.taps();
    let mut out = Matrix::zeros(values.rows(), c);
    if c == 0 {
        return out;
    }
    let offsets = plan.offsets();
    out.as_mut_slice().par_chunks_mut(c).enumerate().for_each(|(slot, dst)| {
        let row = &plan.neighbors[slot * taps..(slot + 1) * taps];
        for n in 0..taps {
            let src = if transpose { row[offsets.negated(n)] } else { row[n] };
            if src == ABSENT {
                continue;
            }
            let vals = values.row(src as usize);
            for ch in 0..c {
                dst[ch] += weights(ch)[n] * vals[ch];
            }
        }
    });
    out
}

/// `ṽ_o = Σ_k b_o^k ṽ_{L_o^k}` at every output point.
pub fn slice(plan: &LatticePlan, values: &Matrix) -> Result<DataMap> {
    check_lattice_values(plan, values)?;
    Ok(slice_raw(&plan.output, values))
}

fn slice_raw(records: &PointRecords, values: &Matrix) -> Matrix {
    let c = values.cols();
    let mut out = Matrix::zeros(records.len(), c);
    if c == 0 {
        return out;
    }
    out.as_mut_slice().par_chunks_mut(c).enumerate().for_each(|(p, dst)| {
        for (&s, &b) in records.slots(p).iter().zip(records.bary(p)) {
            if s == ABSENT {
                continue;
            }
            for (o, v) in dst.iter_mut().zip(values.row(s as usize)) {
                *o += b * v;
            }
        }
    });
    out
}

/// Intermediate values of a forward pass, needed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    splatted: Matrix,
    convolved: Matrix,
    norm_splatted: Matrix,
    norm_convolved: Matrix,
    numerator: Matrix,
    normalizer: Vec<f64>,
}

/// Result of [`forward`].
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub output: DataMap,
    /// Output points whose normalizer vanished; their output is 0.
    pub empty_cells: usize,
    pub cache: ForwardCache,
}

fn check_forward_inputs(plan: &LatticePlan, v: &DataMap, kernel: &FilterKernel, norm: &NormKernel) -> Result<()> {
    if v.rows() != plan.input.len() {
        return Err(shape_err(format!("{} data rows for {} input points", v.rows(), plan.input.len())));
    }
    if kernel.channels() != v.cols() || kernel.taps() != plan.taps() {
        return Err(shape_err(format!(
            "kernel {}x{} does not fit {} channels and {} taps",
            kernel.channels(),
            kernel.taps(),
            v.cols(),
            plan.taps()
        )));
    }
    if norm.taps() != plan.taps() {
        return Err(shape_err(format!("normalization kernel has {} taps, plan has {}", norm.taps(), plan.taps())));
    }
    Ok(())
}

/// Filters `v` through the lattice and divides by the same filter applied to
/// all-ones data with the normalization kernel.
pub fn forward(plan: &LatticePlan, v: &DataMap, kernel: &FilterKernel, norm: &NormKernel) -> Result<ForwardResult> {
    check_forward_inputs(plan, v, kernel, norm)?;
    let m = plan.lattice_len();
    let splatted = gather_points(&plan.input, v, m);
    let convolved = convolve_raw(plan, &splatted, |ch| kernel.channel(ch), false);
    let numerator = slice_raw(&plan.output, &convolved);

    let ones = Matrix::filled(plan.input.len(), 1, 1.0);
    let nw = norm.weights();
    let norm_splatted = gather_points(&plan.input, &ones, m);
    let norm_convolved = convolve_raw(plan, &norm_splatted, |_| &nw, false);
    let normalizer = slice_raw(&plan.output, &norm_convolved).into_vec();

    let mut output = numerator.clone();
    let mut empty_cells = 0;
    for (o, &z) in normalizer.iter().enumerate() {
        let row = output.row_mut(o);
        if z < EMPTY_CELL_THRESHOLD {
            empty_cells += 1;
            row.iter_mut().for_each(|x| *x = 0.0);
        } else {
            row.iter_mut().for_each(|x| *x /= z);
        }
    }
    Ok(ForwardResult {
        output,
        empty_cells,
        cache: ForwardCache { splatted, convolved, norm_splatted, norm_convolved, numerator, normalizer },
    })
}

/// Switches for [`backward`].
#[derive(Clone, Copy, Debug)]
pub struct BackwardOptions {
    /// Route feature gradients through the normalization pass as well.
    pub normalizer_feature_grad: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self { normalizer_feature_grad: true }
    }
}

/// Gradients of a scalar loss w.r.t. every input of [`forward`].
#[derive(Clone, Debug)]
pub struct LatticeGradients {
    pub data: DataMap,
    pub kernel: Vec<f64>,
    /// With respect to the normalization weights (not their logs).
    pub norm_kernel: Vec<f64>,
    pub input_features: FeatureMap,
    pub output_features: FeatureMap,
    /// Points on a simplex face; their feature gradient is set to zero.
    pub boundary_points: usize,
}

/// Reverse pass of [`forward`]. Simplex membership is held fixed; feature
/// gradients flow through the barycentric weights only.
pub fn backward(
    plan: &LatticePlan,
    v: &DataMap,
    kernel: &FilterKernel,
    norm: &NormKernel,
    cache: &ForwardCache,
    grad_out: &DataMap,
    options: BackwardOptions,
) -> Result<LatticeGradients> {
    check_forward_inputs(plan, v, kernel, norm)?;
    let c = v.cols();
    let m = plan.lattice_len();
    let p_out = plan.output.len();
    if grad_out.rows() != p_out || grad_out.cols() != c {
        return Err(shape_err(format!(
            "output gradient is {}x{}, expected {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            p_out,
            c
        )));
    }
    if cache.splatted.rows() != m || cache.normalizer.len() != p_out || cache.splatted.cols() != c {
        return Err(shape_err("forward cache does not belong to this plan".to_string()));
    }
    let taps = plan.taps();
    let corners = plan.dim() + 1;

    // quotient rule
    let mut g_num = Matrix::zeros(p_out, c);
    let mut g_den = Matrix::zeros(p_out, 1);
    for o in 0..p_out {
        let z = cache.normalizer[o];
        if z < EMPTY_CELL_THRESHOLD {
            continue;
        }
        let g = grad_out.row(o);
        let num = cache.numerator.row(o);
        let mut acc = 0.0;
        for ch in 0..c {
            g_num.set(o, ch, g[ch] / z);
            acc += g[ch] * num[ch];
        }
        g_den.set(o, 0, -acc / (z * z));
    }

    let mut bary_out = vec![0.0; p_out * corners];
    let mut bary_in = vec![0.0; plan.input.len() * corners];

    // main path
    let g_conv = gather_points(&plan.output, &g_num, m);
    accumulate_slice_bary(&plan.output, &g_num, &cache.convolved, &mut bary_out);
    let g_splat = convolve_raw(plan, &g_conv, |ch| kernel.channel(ch), true);
    let grad_kernel = kernel_gradient(plan, &g_conv, &cache.splatted, taps);
    let data = slice_raw(&plan.input, &g_splat);
    accumulate_slice_bary(&plan.input, v, &g_splat, &mut bary_in);

    // normalization path
    let nw = norm.weights();
    let g_nconv = gather_points(&plan.output, &g_den, m);
    let g_nsplat = convolve_raw(plan, &g_nconv, |_| &nw, true);
    let norm_kernel = kernel_gradient(plan, &g_nconv, &cache.norm_splatted, taps);
    if options.normalizer_feature_grad {
        accumulate_slice_bary(&plan.output, &g_den, &cache.norm_convolved, &mut bary_out);
        let ones = Matrix::filled(plan.input.len(), 1, 1.0);
        accumulate_slice_bary(&plan.input, &ones, &g_nsplat, &mut bary_in);
    }

    let input_features = chain_jacobian(&plan.input, &bary_in, plan.dim());
    let output_features = chain_jacobian(&plan.output, &bary_out, plan.dim());
    Ok(LatticeGradients {
        data,
        kernel: grad_kernel,
        norm_kernel,
        input_features,
        output_features,
        boundary_points: plan.input.boundary_count() + plan.output.boundary_count(),
    })
}

/// `∂L/∂b_p^k += Σ_ch point_grad[p][ch] * lattice[slot_p^k][ch]`.
fn accumulate_slice_bary(records: &PointRecords, point: &Matrix, lattice: &Matrix, out: &mut [f64]) {
    let corners = out.len() / records.len().max(1);
    out.par_chunks_mut(corners).enumerate().for_each(|(p, dst)| {
        let g = point.row(p);
        for (k, &s) in records.slots(p).iter().enumerate() {
            if s == ABSENT {
                continue;
            }
            let lv = lattice.row(s as usize);
            dst[k] += g.iter().zip(lv).map(|(a, b)| a * b).sum::<f64>();
        }
    });
}

/// `∂L/∂w[ch][n] = Σ_L g[L][ch] * values[nbr(L, n)][ch]`.
fn kernel_gradient(plan: &LatticePlan, g: &Matrix, values: &Matrix, taps: usize) -> Vec<f64> {
    let c = g.cols();
    let mut out = vec![0.0; c * taps];
    for slot in 0..plan.lattice_len() {
        let row = &plan.neighbors[slot * taps..(slot + 1) * taps];
        let gl = g.row(slot);
        for (n, &src) in row.iter().enumerate() {
            if src == ABSENT {
                continue;
            }
            let vals = values.row(src as usize);
            for ch in 0..c {
                out[ch * taps + n] += gl[ch] * vals[ch];
            }
        }
    }
    out
}

fn chain_jacobian(records: &PointRecords, bary_grad: &[f64], d: usize) -> Matrix {
    let corners = d + 1;
    let mut out = Matrix::zeros(records.len(), d);
    out.as_mut_slice().par_chunks_mut(d.max(1)).enumerate().for_each(|(p, dst)| {
        if records.is_boundary(p) {
            return;
        }
        let jac = records.jac(p);
        let gb = &bary_grad[p * corners..(p + 1) * corners];
        for k in 0..corners {
            for j in 0..d {
                dst[j] += gb[k] * jac[k * d + j];
            }
        }
    });
    out
}
