//! Open-addressing hash from lattice keys to dense storage slots.

use super::key::{validate_full, LatticeKey};
use crate::error::{Error, Result};

const EMPTY: u32 = u32::MAX;
const INITIAL_CAPACITY: usize = 64;

/// Maps lattice keys to slots `0..M` in insertion order.
///
/// Linear probing over a power-of-two table; the table doubles once the load
/// factor passes 0.75. Keys are stored in reduced form (`d` entries).
#[derive(Clone, Debug)]
pub struct LatticeHash {
    d: usize,
    keys: Vec<i32>,
    table: Vec<u32>,
}

impl LatticeHash {
    pub fn new(d: usize) -> Self {
        Self::with_capacity(d, INITIAL_CAPACITY)
    }

    pub fn with_capacity(d: usize, expected: usize) -> Self {
        let cap = (expected * 4 / 3 + 1).next_power_of_two().max(INITIAL_CAPACITY);
        Self { d, keys: Vec::with_capacity(expected * d), table: vec![EMPTY; cap] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of distinct keys `M`.
    pub fn len(&self) -> usize {
        self.keys.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.table.len()
    }

    /// Inserts a key given in full `d + 1` form; returns its slot.
    /// Re-inserting returns the existing slot.
    pub fn insert(&mut self, full: &[i32]) -> Result<usize> {
        self.check_full(full)?;
        Ok(self.insert_reduced(&full[..self.d]))
    }

    pub fn insert_key(&mut self, key: &LatticeKey) -> Result<usize> {
        if key.dim() != self.d {
            return Err(Error::InvalidKey(format!("key dimension {} != {}", key.dim(), self.d)));
        }
        Ok(self.insert_reduced(key.reduced()))
    }

    /// Looks up a key given in full `d + 1` form.
    pub fn lookup(&self, full: &[i32]) -> Result<Option<usize>> {
        self.check_full(full)?;
        Ok(self.lookup_reduced(&full[..self.d]))
    }

    pub fn lookup_key(&self, key: &LatticeKey) -> Option<usize> {
        if key.dim() != self.d {
            return None;
        }
        self.lookup_reduced(key.reduced())
    }

    pub fn key(&self, slot: usize) -> LatticeKey {
        LatticeKey::from_reduced(self.reduced(slot).to_vec())
    }

    pub(crate) fn reduced(&self, slot: usize) -> &[i32] {
        &self.keys[slot * self.d..(slot + 1) * self.d]
    }

    pub fn freeze(self) -> FrozenLatticeHash {
        FrozenLatticeHash(self)
    }

    pub(crate) fn insert_reduced(&mut self, coords: &[i32]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        let mask = self.table.len() - 1;
        let mut i = hash_coords(coords) as usize & mask;
        loop {
            let slot = self.table[i];
            if slot == EMPTY {
                break;
            }
            if self.reduced(slot as usize) == coords {
                return slot as usize;
            }
            i = (i + 1) & mask;
        }
        let slot = self.len();
        self.keys.extend_from_slice(coords);
        self.table[i] = slot as u32;
        if (slot + 1) * 4 > self.table.len() * 3 {
            self.grow();
        }
        slot
    }

    pub(crate) fn lookup_reduced(&self, coords: &[i32]) -> Option<usize> {
        let mask = self.table.len() - 1;
        let mut i = hash_coords(coords) as usize & mask;
        loop {
            let slot = self.table[i];
            if slot == EMPTY {
                return None;
            }
            if self.reduced(slot as usize) == coords {
                return Some(slot as usize);
            }
            i = (i + 1) & mask;
        }
    }

    fn grow(&mut self) {
        let cap = self.table.len() * 2;
        let mask = cap - 1;
        let mut table = vec![EMPTY; cap];
        for slot in 0..self.len() {
            let mut i = hash_coords(self.reduced(slot)) as usize & mask;
            while table[i] != EMPTY {
                i = (i + 1) & mask;
            }
            table[i] = slot as u32;
        }
        self.table = table;
    }

    fn check_full(&self, full: &[i32]) -> Result<()> {
        if full.len() != self.d + 1 {
            return Err(Error::InvalidKey(format!("expected {} coordinates, got {}", self.d + 1, full.len())));
        }
        validate_full(full)
    }
}

/// Read-only view of a finished [`LatticeHash`]; safe to share across threads.
#[derive(Clone, Debug)]
pub struct FrozenLatticeHash(LatticeHash);

impl FrozenLatticeHash {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.d
    }

    pub fn lookup(&self, full: &[i32]) -> Result<Option<usize>> {
        self.0.lookup(full)
    }

    pub fn lookup_key(&self, key: &LatticeKey) -> Option<usize> {
        self.0.lookup_key(key)
    }

    pub(crate) fn lookup_reduced(&self, coords: &[i32]) -> Option<usize> {
        self.0.lookup_reduced(coords)
    }

    pub fn key(&self, slot: usize) -> LatticeKey {
        self.0.key(slot)
    }

    pub(crate) fn reduced(&self, slot: usize) -> &[i32] {
        self.0.reduced(slot)
    }
}

#[inline]
fn hash_coords(coords: &[i32]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &c in coords {
        h = (h ^ c as u32 as u64).wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 32;
    }
    // splitmix64 finalizer
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_then_lookup() {
        let mut h = LatticeHash::new(2);
        let slot = h.insert(&[3, -3, 0]).unwrap();
        assert_eq!(h.lookup(&[3, -3, 0]).unwrap(), Some(slot));
        assert_eq!(h.insert(&[3, -3, 0]).unwrap(), slot);
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn absent_key() {
        let mut h = LatticeHash::new(2);
        h.insert(&[0, 0, 0]).unwrap();
        assert_eq!(h.lookup(&[1, 1, -2]).unwrap(), None);
    }

    #[test]
    fn invalid_key_rejected() {
        let mut h = LatticeHash::new(2);
        assert!(matches!(h.insert(&[1, 1, 1]), Err(Error::InvalidKey(_))));
        assert!(matches!(h.lookup(&[1, 0]), Err(Error::InvalidKey(_))));
    }

    #[test]
    fn grows_past_load_factor() {
        let mut h = LatticeHash::new(1);
        for i in 0..1000 {
            h.insert(&[4 * i, -4 * i]).unwrap();
        }
        assert_eq!(h.len(), 1000);
        assert!(h.len() * 4 <= h.capacity() * 3);
        for i in 0..1000 {
            assert_eq!(h.lookup(&[4 * i, -4 * i]).unwrap(), Some(i as usize));
        }
    }
}
