#![allow(dead_code)]

use permlattice::lattice::NeighborOffsets;
use permlattice::lattice::Permutohedral;
use permlattice::ops::{gaussian_taps, FilterKernel, NormKernel};
use permlattice::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random point whose barycentric weights all exceed `margin`.
pub fn interior_point(rng: &mut ChaCha8Rng, lattice: &Permutohedral, spread: f64, margin: f64) -> Vec<f64> {
    loop {
        let f: Vec<f64> = (0..lattice.dim()).map(|_| rng.gen_range(-spread..spread)).collect();
        if lattice.enclose(&f).min_bary() > margin {
            return f;
        }
    }
}

pub fn interior_features(rng: &mut ChaCha8Rng, d: usize, p: usize, spread: f64, margin: f64) -> Matrix {
    let lattice = Permutohedral::new(d).unwrap();
    let rows: Vec<Vec<f64>> = (0..p).map(|_| interior_point(rng, &lattice, spread, margin)).collect();
    Matrix::from_rows(&rows).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, c: usize, taps: usize) -> FilterKernel {
    FilterKernel::from_vec(c, taps, (0..c * taps).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_norm_kernel(rng: &mut ChaCha8Rng, offsets: &NeighborOffsets) -> NormKernel {
    let w: Vec<f64> = gaussian_taps(offsets).iter().map(|g| g * rng.gen_range(0.5..1.5)).collect();
    NormKernel::from_weights(&w).unwrap()
}

/// Relative deviation of two equally-shaped matrices, scaled by the larger
/// max-norm.
pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    let scale = a.max_abs().max(b.max_abs()).max(1e-300);
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}
