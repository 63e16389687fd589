//! Checks the analytic lattice gradients against central differences.

use permlattice::gradcheck::{central_difference, max_relative_error};
use permlattice::lattice::{NeighborOffsets, Permutohedral};
use permlattice::ops::{backward, build_plan, forward, BackwardOptions, FilterKernel, NormKernel};
use permlattice::{Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, s, c, p) = (3, 1, 2, 12);
    let lattice = Permutohedral::new(d)?;

    // Keep every point away from simplex faces so the loss is smooth.
    let mut rows = Vec::new();
    while rows.len() < p {
        let f: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        if lattice.enclose(&f).min_bary() > 1e-3 {
            rows.push(f);
        }
    }
    let f = Matrix::from_rows(&rows)?;
    let v = random(&mut rng, p, c);
    let target = random(&mut rng, p, c);
    let offsets = NeighborOffsets::new(d, s as isize)?;
    let kernel =
        FilterKernel::from_vec(c, offsets.len(), (0..c * offsets.len()).map(|_| rng.gen_range(0.1..1.0)).collect())?;
    let norm = NormKernel::gaussian(&offsets);

    let loss = |f: &Matrix, v: &Matrix, k: &FilterKernel| -> f64 {
        let plan = build_plan(f, f, s).unwrap();
        let out = forward(&plan, v, k, &norm).unwrap().output;
        out.as_slice().iter().zip(target.as_slice()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
    };

    let plan = build_plan(&f, &f, s)?;
    let fwd = forward(&plan, &v, &kernel, &norm)?;
    let mut grad_out = fwd.output.clone();
    for (g, t) in grad_out.as_mut_slice().iter_mut().zip(target.as_slice()) {
        *g -= t;
    }
    let g = backward(&plan, &v, &kernel, &norm, &fwd.cache, &grad_out, BackwardOptions::default())?;

    for h in [1e-5, 1e-3] {
        let num_v =
            central_difference(|x| loss(&f, &Matrix::from_vec(p, c, x.to_vec()).unwrap(), &kernel), v.as_slice(), h);
        let num_k = central_difference(
            |x| loss(&f, &v, &FilterKernel::from_vec(c, offsets.len(), x.to_vec()).unwrap()),
            kernel.as_slice(),
            h,
        );
        let num_f =
            central_difference(|x| loss(&Matrix::from_vec(p, d, x.to_vec()).unwrap(), &v, &kernel), f.as_slice(), h);
        // Features feed both sides, so their gradients add.
        let both: Vec<f64> =
            g.input_features.as_slice().iter().zip(g.output_features.as_slice()).map(|(a, b)| a + b).collect();
        println!("h = {h:e}");
        println!("  data     {:.2e}", max_relative_error(g.data.as_slice(), &num_v));
        println!("  kernel   {:.2e}", max_relative_error(&g.kernel, &num_k));
        println!("  features {:.2e}", max_relative_error(&both, &num_f));
    }
    Ok(())
}
