//! Geometry of the permutohedral lattice.
//!
//! Features in `R^d` are embedded into the hyperplane `H = {x : Σx = 0}` of
//! `R^{d+1}`. The lattice corners are the integer points of `H` whose
//! coordinates share one residue modulo `d + 1`; they tile `H` with uniform
//! simplices. [`Permutohedral::enclose`] finds the simplex around a point,
//! its barycentric coordinates, and their Jacobian with respect to the
//! original feature vector.

mod hash;
mod key;
mod neighbors;

pub use hash::{FrozenLatticeHash, LatticeHash};
pub use key::LatticeKey;
pub use neighbors::{neighbor_offsets, NeighborOffsets};

use crate::error::{Error, Result};
use crate::gradcheck::max_relative_error;

/// Elevation and simplex lookup for a fixed dimension `d`.
#[derive(Clone, Debug)]
pub struct Permutohedral {
    d: usize,
    scale: Vec<f64>,
}

/// The simplex enclosing one elevated point.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexEnclosure {
    d: usize,
    /// `(d+1) x d` reduced corner coordinates; corner `k` has remainder `k`.
    keys: Vec<i32>,
    /// Barycentric weight of each corner.
    pub bary: Vec<f64>,
    /// `(d+1) x d` row-major Jacobian `∂bary_k / ∂f_j`.
    pub jac: Vec<f64>,
}

impl SimplexEnclosure {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn corner(&self, k: usize) -> LatticeKey {
        LatticeKey::from_reduced(self.corner_reduced(k).to_vec())
    }

    pub fn corners(&self) -> Vec<LatticeKey> {
        (0..=self.d).map(|k| self.corner(k)).collect()
    }

    pub(crate) fn corner_reduced(&self, k: usize) -> &[i32] {
        &self.keys[k * self.d..(k + 1) * self.d]
    }

    pub fn jac_row(&self, k: usize) -> &[f64] {
        &self.jac[k * self.d..(k + 1) * self.d]
    }

    pub fn min_bary(&self) -> f64 {
        self.bary.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Permutohedral {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension("feature dimension must be at least 1".into()));
        }
        // scale so that a unit-variance Gaussian blur corresponds to one lattice hop
        let inv_std_dev = (2.0f64 / 3.0).sqrt() * (d as f64 + 1.0);
        let scale = (0..d).map(|i| inv_std_dev / (((i + 1) * (i + 2)) as f64).sqrt()).collect();
        Ok(Self { d, scale })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Per-axis scale of the elevation basis.
    pub fn scale_factors(&self) -> &[f64] {
        &self.scale
    }

    /// Maps `f ∈ R^d` onto the hyperplane `H ⊂ R^{d+1}`.
    pub fn elevate(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d + 1];
        self.elevate_into(f, &mut out);
        out
    }

    fn elevate_into(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.d);
        let mut sm = 0.0;
        for i in (1..=self.d).rev() {
            let cf = f[i - 1] * self.scale[i - 1];
            out[i] = sm - i as f64 * cf;
            sm += cf;
        }
        out[0] = sm;
    }

    /// Finds the enclosing simplex of `f`, its barycentric coordinates and
    /// their Jacobian.
    ///
    /// Ties in the rank sort resolve by index, so the result is a
    /// deterministic one-sided choice on simplex faces.
    pub fn enclose(&self, f: &[f64]) -> SimplexEnclosure {
        let d = self.d;
        let n = d + 1;
        let nf = n as f64;
        let mut elevated = vec![0.0; n];
        self.elevate_into(f, &mut elevated);

        // nearest remainder-0 point
        let mut rem0 = vec![0i64; n];
        let mut sum = 0i64;
        for i in 0..n {
            let v = elevated[i] / nf;
            let up = v.ceil() * nf;
            let down = v.floor() * nf;
            let r = if up - elevated[i] < elevated[i] - down { up } else { down };
            rem0[i] = r as i64;
            sum += rem0[i];
        }
        let sum = sum / n as i64;

        // rank of each differential coordinate (0 = largest)
        let mut rank = vec![0i64; n];
        for i in 0..d {
            for j in (i + 1)..n {
                if elevated[i] - (rem0[i] as f64) < elevated[j] - (rem0[j] as f64) {
                    rank[i] += 1;
                } else {
                    rank[j] += 1;
                }
            }
        }

        // walk back onto the hyperplane if the rounded point left it
        let ni = n as i64;
        if sum > 0 {
            for i in 0..n {
                if rank[i] >= ni - sum {
                    rem0[i] -= ni;
                    rank[i] += sum - ni;
                } else {
                    rank[i] += sum;
                }
            }
        } else if sum < 0 {
            for i in 0..n {
                if rank[i] < -sum {
                    rem0[i] += ni;
                    rank[i] += ni + sum;
                } else {
                    rank[i] += sum;
                }
            }
        }

        let mut bary = vec![0.0; n + 1];
        for i in 0..n {
            let delta = (elevated[i] - rem0[i] as f64) / nf;
            let r = rank[i] as usize;
            bary[d - r] += delta;
            bary[n - r] -= delta;
        }
        bary[0] += 1.0 + bary[n];
        bary.truncate(n);

        // ∂bary/∂elevated is ±1/(d+1) at the two slots each coordinate feeds;
        // chain with the elevation matrix column by column
        let mut jac = vec![0.0; n * d];
        for i in 0..n {
            let r = rank[i] as usize;
            let plus = d - r;
            let minus = (n - r) % n;
            for j in 0..d {
                let e = self.elevation_entry(i, j) / nf;
                if e != 0.0 {
                    jac[plus * d + j] += e;
                    jac[minus * d + j] -= e;
                }
            }
        }

        let mut keys = vec![0i32; n * d];
        for rem in 0..n {
            for i in 0..d {
                let shift = if rank[i] as usize <= d - rem { rem as i64 } else { rem as i64 - ni };
                keys[rem * d + i] = (rem0[i] + shift) as i32;
            }
        }

        SimplexEnclosure { d, keys, bary, jac }
    }

    /// Entry `(i, j)` of the `(d+1) x d` elevation matrix.
    #[inline]
    fn elevation_entry(&self, i: usize, j: usize) -> f64 {
        if i <= j {
            self.scale[j]
        } else if i == j + 1 {
            -((j + 1) as f64) * self.scale[j]
        } else {
            0.0
        }
    }

    /// Compares the analytic barycentric Jacobian at `f` against central
    /// finite differences with step `h` and returns the max relative error.
    pub fn jacobian_check(&self, f: &[f64], h: f64) -> Result<f64> {
        if f.len() != self.d {
            return Err(Error::Shape(format!("feature has {} entries, lattice is {}-d", f.len(), self.d)));
        }
        let base = self.enclose(f);
        let margin = 10.0 * h;
        let min_bary = base.min_bary();
        if min_bary <= margin {
            return Err(Error::BoundaryProximity { min_bary, margin });
        }
        let n = self.d + 1;
        let mut numeric = vec![0.0; n * self.d];
        let mut probe = f.to_vec();
        for j in 0..self.d {
            probe[j] = f[j] + h;
            let plus = self.enclose(&probe);
            probe[j] = f[j] - h;
            let minus = self.enclose(&probe);
            probe[j] = f[j];
            if plus.keys != base.keys || minus.keys != base.keys {
                return Err(Error::BoundaryProximity { min_bary, margin });
            }
            for k in 0..n {
                numeric[k * self.d + j] = (plus.bary[k] - minus.bary[k]) / (2.0 * h);
            }
        }
        Ok(max_relative_error(&base.jac, &numeric))
    }
}

/// Elevates `f` with the default basis for `d = f.len()`.
pub fn elevate(f: &[f64]) -> Result<Vec<f64>> {
    Ok(Permutohedral::new(f.len())?.elevate(f))
}

/// Finds the simplex enclosing `f` with `d = f.len()`.
pub fn find_simplex(f: &[f64]) -> Result<SimplexEnclosure> {
    Ok(Permutohedral::new(f.len())?.enclose(f))
}

/// Max relative error between the barycentric Jacobian at `f` and central
/// differences with step `h`.
pub fn barycentric_jacobian_check(f: &[f64], h: f64) -> Result<f64> {
    Permutohedral::new(f.len())?.jacobian_check(f, h)
}
