use std::fmt;

use crate::error::{Error, Result};

/// A corner of the permutohedral lattice.
///
/// Only the first `d` coordinates are stored; the last one is implied by the
/// zero-sum constraint of the hyperplane.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeKey {
    coords: Vec<i32>,
}

impl LatticeKey {
    /// Builds a key from its full `d + 1` coordinates.
    ///
    /// The entries must sum to zero and be congruent to one another modulo
    /// `d + 1`.
    pub fn from_full(full: &[i32]) -> Result<Self> {
        validate_full(full)?;
        Ok(Self { coords: full[..full.len() - 1].to_vec() })
    }

    pub(crate) fn from_reduced(coords: Vec<i32>) -> Self {
        Self { coords }
    }

    /// Lattice dimension `d`.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn reduced(&self) -> &[i32] {
        &self.coords
    }

    pub fn full(&self) -> Vec<i32> {
        let mut v = self.coords.clone();
        v.push(-self.coords.iter().sum::<i32>());
        v
    }

    /// The common residue of the coordinates modulo `d + 1`.
    pub fn remainder(&self) -> usize {
        let m = self.coords.len() as i32 + 1;
        self.full()[0].rem_euclid(m) as usize
    }
}

impl fmt::Debug for LatticeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LatticeKey{:?}", self.full())
    }
}

pub(crate) fn validate_full(full: &[i32]) -> Result<()> {
    if full.len() < 2 {
        return Err(Error::InvalidKey(format!("key needs at least 2 entries, got {}", full.len())));
    }
    let sum: i64 = full.iter().map(|&c| c as i64).sum();
    if sum != 0 {
        return Err(Error::InvalidKey(format!("entries of {full:?} sum to {sum}, not 0")));
    }
    let m = full.len() as i32;
    let r = full[0].rem_euclid(m);
    if full.iter().any(|c| c.rem_euclid(m) != r) {
        return Err(Error::InvalidKey(format!("entries of {full:?} are not congruent modulo {m}")));
    }
    Ok(())
}
