use crate::error::{Error, Result};

/// Canonical neighborhood of a lattice corner.
///
/// Offset `Σ_k a_k n_k` with `a_k ∈ {0..=s}` and `min_k a_k = 0`, where
/// `n_k` is `d` at position `k` and `-1` elsewhere. The center is index 0,
/// the rest follow lexicographically by the coefficient tuple `a`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborOffsets {
    d: usize,
    s: usize,
    offsets: Vec<Vec<i32>>,
    coeffs: Vec<Vec<usize>>,
    negated: Vec<usize>,
}

impl NeighborOffsets {
    pub fn new(d: usize, s: isize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension("lattice dimension must be at least 1".into()));
        }
        if s < 0 {
            return Err(Error::InvalidArgument(format!("neighborhood size must be >= 0, got {s}")));
        }
        let s = s as usize;
        let n = d + 1;
        let base = s + 1;
        let mut offsets: Vec<Vec<i32>> = Vec::new();
        let mut coeffs = Vec::new();
        // digits of idx in base s+1, most significant first, give lexicographic order
        for idx in 0..base.pow(n as u32) {
            let mut a = vec![0usize; n];
            let mut rest = idx;
            for slot in a.iter_mut().rev() {
                *slot = rest % base;
                rest /= base;
            }
            if a.iter().copied().min() != Some(0) {
                continue;
            }
            let total: usize = a.iter().sum();
            offsets.push(a.iter().map(|&ak| (ak * n) as i32 - total as i32).collect());
            coeffs.push(a);
        }
        let negated = offsets
            .iter()
            .map(|o| {
                let neg: Vec<i32> = o.iter().map(|v| -v).collect();
                offsets.iter().position(|p| *p == neg).expect("neighborhood is closed under negation")
            })
            .collect();
        Ok(Self { d, s, offsets, coeffs, negated })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn size(&self) -> usize {
        self.s
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Full `d + 1` offset vectors.
    pub fn offsets(&self) -> &[Vec<i32>] {
        &self.offsets
    }

    pub fn coefficients(&self) -> &[Vec<usize>] {
        &self.coeffs
    }

    /// Index of the offset pointing the opposite way.
    pub fn negated(&self, n: usize) -> usize {
        self.negated[n]
    }

    /// `(s+1)^(d+1) - s^(d+1)`.
    pub fn expected_count(d: usize, s: usize) -> usize {
        (s + 1).pow(d as u32 + 1) - s.pow(d as u32 + 1)
    }
}

/// Convenience wrapper around [`NeighborOffsets::new`].
pub fn neighbor_offsets(d: usize, s: isize) -> Result<NeighborOffsets> {
    NeighborOffsets::new(d, s)
}
