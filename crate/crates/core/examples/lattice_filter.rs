//! Filters scattered 2-D samples through the lattice and compares the sparse
//! result against the dense reference.

use permlattice::lattice::NeighborOffsets;
use permlattice::ops::{build_plan, dense_reference_forward, forward, FilterKernel, NormKernel};
use permlattice::{Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (d, s, points) = (2, 1, 40);

    // Two noisy clusters carrying a scalar and a colour-like triple.
    let mut f = Vec::new();
    let mut v = Vec::new();
    for i in 0..points {
        let centre = if i % 2 == 0 { 0.0 } else { 6.0 };
        f.push(vec![centre + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let base = if i % 2 == 0 { 0.2 } else { 0.8 };
        v.push(vec![base + rng.gen_range(-0.1..0.1), base, 1.0 - base]);
    }
    let f = Matrix::from_rows(&f)?;
    let v = Matrix::from_rows(&v)?;

    let offsets = NeighborOffsets::new(d, s as isize)?;
    let kernel = FilterKernel::gaussian(3, &offsets);
    let norm = NormKernel::gaussian(&offsets);

    let plan = build_plan(&f, &f, s)?;
    let out = forward(&plan, &v, &kernel, &norm)?;
    let dense = dense_reference_forward(&f, &f, &v, &kernel, &norm, s)?;

    let worst = out.output.as_slice().iter().zip(dense.as_slice()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("{} points, {} lattice vertices, {} taps", points, plan.lattice_len(), plan.taps());
    println!("empty cells: {}", out.empty_cells);
    println!("max |sparse - dense| = {worst:.3e}");
    for p in 0..4 {
        let before = v.row(p);
        let after = out.output.row(p);
        println!("point {p}: {:.3?} -> {:.3?}", before, after);
    }
    Ok(())
}
