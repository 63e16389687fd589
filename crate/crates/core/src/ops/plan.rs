use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::lattice::{FrozenLatticeHash, LatticeHash, NeighborOffsets, Permutohedral};
use crate::tensor::FeatureMap;

pub(crate) const ABSENT: u32 = u32::MAX;

/// Cached enclosure of a point set: corner slots, weights and Jacobians.
///
/// Corners with a non-positive weight are not linked (`ABSENT`); a point with
/// such a corner lies on a simplex face and is flagged as a boundary point.
#[derive(Clone, Debug)]
pub struct PointRecords {
    corners: usize,
    d: usize,
    pub(crate) slots: Vec<u32>,
    pub(crate) bary: Vec<f64>,
    pub(crate) jac: Vec<f64>,
    pub(crate) boundary: Vec<bool>,
    // transpose: for each lattice slot, the (point, corner) pairs touching it
    pub(crate) gather_start: Vec<usize>,
    pub(crate) gather: Vec<(u32, u32)>,
}

impl PointRecords {
    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn slots(&self, p: usize) -> &[u32] {
        &self.slots[p * self.corners..(p + 1) * self.corners]
    }

    pub fn bary(&self, p: usize) -> &[f64] {
        &self.bary[p * self.corners..(p + 1) * self.corners]
    }

    /// `(d+1) x d` Jacobian of the barycentric weights of point `p`.
    pub fn jac(&self, p: usize) -> &[f64] {
        let sz = self.corners * self.d;
        &self.jac[p * sz..(p + 1) * sz]
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        self.boundary[p]
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    pub(crate) fn gather_range(&self, slot: usize) -> &[(u32, u32)] {
        &self.gather[self.gather_start[slot]..self.gather_start[slot + 1]]
    }

    fn build_gather(&mut self, m: usize) {
        let mut counts = vec![0usize; m + 1];
        for &s in &self.slots {
            if s != ABSENT {
                counts[s as usize + 1] += 1;
            }
        }
        for i in 0..m {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut gather = vec![(0u32, 0u32); counts[m]];
        for p in 0..self.len() {
            for k in 0..self.corners {
                let s = self.slots[p * self.corners + k];
                if s != ABSENT {
                    gather[fill[s as usize]] = (p as u32, k as u32);
                    fill[s as usize] += 1;
                }
            }
        }
        self.gather_start = counts;
        self.gather = gather;
    }
}

/// Everything the lattice operations need for one pair of feature sets.
#[derive(Clone, Debug)]
pub struct LatticePlan {
    d: usize,
    offsets: NeighborOffsets,
    hash: FrozenLatticeHash,
    pub(crate) input: PointRecords,
    pub(crate) output: PointRecords,
    pub(crate) neighbors: Vec<u32>,
}

impl LatticePlan {
    /// Encloses every input and output point, allocates all touched
    /// corners and resolves the neighborhood of each corner.
    pub fn build(f_in: &FeatureMap, f_out: &FeatureMap, s: usize) -> Result<Self> {
        let d = f_in.cols();
        if f_out.cols() != d {
            return Err(shape_err(format!("input features are {d}-d but output features are {}-d", f_out.cols())));
        }
        if !f_in.is_finite() || !f_out.is_finite() {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        let lattice = Permutohedral::new(d)?;
        let offsets = NeighborOffsets::new(d, s as isize)?;
        let mut hash = LatticeHash::with_capacity(d, (f_in.rows() + f_out.rows()) * 2);
        let input = enclose_all(&lattice, f_in, &mut hash);
        let output = enclose_all(&lattice, f_out, &mut hash);
        let hash = hash.freeze();
        let m = hash.len();

        let taps = offsets.len();
        let mut neighbors = vec![ABSENT; m * taps];
        neighbors.par_chunks_mut(taps).enumerate().for_each(|(slot, row)| {
            let base = hash.reduced(slot);
            let mut probe = vec![0i32; d];
            for (n, off) in offsets.offsets().iter().enumerate() {
                for j in 0..d {
                    probe[j] = base[j] + off[j];
                }
                row[n] = hash.lookup_reduced(&probe).map_or(ABSENT, |v| v as u32);
            }
        });

        let mut plan = Self { d, offsets, hash, input, output, neighbors };
        plan.input.build_gather(m);
        plan.output.build_gather(m);
        Ok(plan)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of allocated lattice corners `M`.
    pub fn lattice_len(&self) -> usize {
        self.hash.len()
    }

    pub fn offsets(&self) -> &NeighborOffsets {
        &self.offsets
    }

    pub fn taps(&self) -> usize {
        self.offsets.len()
    }

    pub fn hash(&self) -> &FrozenLatticeHash {
        &self.hash
    }

    pub fn input(&self) -> &PointRecords {
        &self.input
    }

    pub fn output(&self) -> &PointRecords {
        &self.output
    }

    /// Slot of the neighbor of `slot` at offset index `n`, if allocated.
    pub fn neighbor(&self, slot: usize, n: usize) -> Option<usize> {
        let v = self.neighbors[slot * self.taps() + n];
        (v != ABSENT).then_some(v as usize)
    }
}

fn enclose_all(lattice: &Permutohedral, f: &FeatureMap, hash: &mut LatticeHash) -> PointRecords {
    let d = lattice.dim();
    let corners = d + 1;
    let enclosures: Vec<_> = (0..f.rows()).into_par_iter().map(|p| lattice.enclose(f.row(p))).collect();
    let mut rec = PointRecords {
        corners,
        d,
        slots: Vec::with_capacity(f.rows() * corners),
        bary: Vec::with_capacity(f.rows() * corners),
        jac: Vec::with_capacity(f.rows() * corners * d),
        boundary: Vec::with_capacity(f.rows()),
        gather_start: Vec::new(),
        gather: Vec::new(),
    };
    for e in &enclosures {
        let mut on_face = false;
        for k in 0..corners {
            let b = e.bary[k];
            if b > 0.0 {
                rec.slots.push(hash.insert_reduced(e.corner_reduced(k)) as u32);
                rec.bary.push(b);
            } else {
                on_face = true;
                rec.slots.push(ABSENT);
                rec.bary.push(0.0);
            }
        }
        rec.jac.extend_from_slice(&e.jac);
        rec.boundary.push(on_face);
    }
    rec
}
