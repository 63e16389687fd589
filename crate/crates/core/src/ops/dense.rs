//! Direct evaluation of the filtered, normalized lattice output with dense
//! matrices and an ordered key index. Slow; used to check the sparse path.

use std::collections::BTreeMap;

use super::{FilterKernel, NormKernel, EMPTY_CELL_THRESHOLD};
use crate::error::{shape_err, Error, Result};
use crate::lattice::{NeighborOffsets, Permutohedral};
use crate::tensor::{DataMap, FeatureMap, Matrix};

/// Upper bound on `P_in * P_out * M` accepted by [`dense_reference_forward`].
pub const DENSE_SIZE_LIMIT: usize = 10_000_000;

pub fn dense_reference_forward(
    f_in: &FeatureMap,
    f_out: &FeatureMap,
    v: &DataMap,
    kernel: &FilterKernel,
    norm: &NormKernel,
    s: usize,
) -> Result<DataMap> {
    let d = f_in.cols();
    if f_out.cols() != d || v.rows() != f_in.rows() {
        return Err(shape_err("dense reference: inconsistent inputs"));
    }
    let lattice = Permutohedral::new(d)?;
    let offsets = NeighborOffsets::new(d, s as isize)?;
    if kernel.channels() != v.cols() || kernel.taps() != offsets.len() || norm.taps() != offsets.len() {
        return Err(shape_err("dense reference: kernel shape"));
    }
    let c = v.cols();
    let (p_in, p_out) = (f_in.rows(), f_out.rows());

    // unique corners by linear search, full (d+1) form
    let mut keys: Vec<Vec<i32>> = Vec::new();
    let mut enclose = |f: &FeatureMap| -> Vec<Vec<(usize, f64)>> {
        (0..f.rows())
            .map(|p| {
                let e = lattice.enclose(f.row(p));
                (0..=d)
                    .filter(|&k| e.bary[k] > 0.0)
                    .map(|k| {
                        let key = e.corner(k).full();
                        let idx = match keys.iter().position(|x| *x == key) {
                            Some(i) => i,
                            None => {
                                keys.push(key);
                                keys.len() - 1
                            }
                        };
                        (idx, e.bary[k])
                    })
                    .collect()
            })
            .collect()
    };
    let in_corners = enclose(f_in);
    let out_corners = enclose(f_out);
    let m = keys.len();
    if p_in.saturating_mul(p_out).saturating_mul(m) > DENSE_SIZE_LIMIT {
        return Err(Error::SizeGuard(format!("{p_in} x {p_out} x {m} exceeds the dense limit {DENSE_SIZE_LIMIT}")));
    }

    // splat matrix S (m x p_in) and slice matrix T (p_out x m)
    let mut splat = Matrix::zeros(m, p_in);
    for (i, cs) in in_corners.iter().enumerate() {
        for &(l, b) in cs {
            splat.set(l, i, splat.get(l, i) + b);
        }
    }
    let mut slice = Matrix::zeros(p_out, m);
    for (o, cs) in out_corners.iter().enumerate() {
        for &(l, b) in cs {
            slice.set(o, l, slice.get(o, l) + b);
        }
    }

    // adjacency A_n[l][l'] = 1 iff key_l' = key_l + offset_n
    let index: BTreeMap<&[i32], usize> = keys.iter().enumerate().map(|(l, k)| (k.as_slice(), l)).collect();
    let mut adjacency = vec![Vec::new(); offsets.len()];
    for (n, off) in offsets.offsets().iter().enumerate() {
        for (l, key) in keys.iter().enumerate() {
            let shifted: Vec<i32> = key.iter().zip(off).map(|(a, b)| a + b).collect();
            if let Some(&l2) = index.get(shifted.as_slice()) {
                adjacency[n].push((l, l2));
            }
        }
    }
    let filter = |weights: &[f64]| -> Matrix {
        let mut k = Matrix::zeros(m, m);
        for (n, pairs) in adjacency.iter().enumerate() {
            for &(l, l2) in pairs {
                k.set(l, l2, k.get(l, l2) + weights[n]);
            }
        }
        k
    };

    let ones = vec![1.0; p_in];
    let norm_k = filter(&norm.weights());
    let normalizer = matvec(&slice, &matvec(&norm_k, &matvec(&splat, &ones)));

    let mut out = Matrix::zeros(p_out, c);
    for ch in 0..c {
        let col: Vec<f64> = (0..p_in).map(|i| v.get(i, ch)).collect();
        let k = filter(kernel.channel(ch));
        let num = matvec(&slice, &matvec(&k, &matvec(&splat, &col)));
        for o in 0..p_out {
            if normalizer[o] >= EMPTY_CELL_THRESHOLD {
                out.set(o, ch, num[o] / normalizer[o]);
            }
        }
    }
    Ok(out)
}

fn matvec(a: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows()).map(|i| a.row(i).iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}
