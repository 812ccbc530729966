//! Ghost data: copies of remote boxes needed by local interactions.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use crate::morton::MortonKey;
use crate::scalar::Real;

/// Result of looking up a remote box.
#[derive(Debug, Clone, Copy)]
pub enum Ghost<V> {
    /// The box exists and its data was received.
    Present(V),
    /// The box was queried and its owner reported it empty.
    Absent,
    /// Nothing is known about the box.
    Unresolved,
}

/// Source points and charges of remote leaves needed for near-field interactions.
#[derive(Clone, Debug, Default)]
pub struct GhostPoints<T> {
    index: HashMap<MortonKey, Range<usize>>,
    absent: HashSet<MortonKey>,
    points: Vec<[T; 3]>,
    charges: Vec<T>,
}

impl<T: Real> GhostPoints<T> {
    pub fn new() -> Self {
        Self {
            index: HashMap::new(),
            absent: HashSet::new(),
            points: Vec::new(),
            charges: Vec::new(),
        }
    }

    /// Mark a queried remote leaf as confirmed empty.
    pub fn mark_absent(&mut self, key: MortonKey) {
        self.absent.insert(key);
    }

    /// Append the sources of one remote leaf.
    pub fn insert(&mut self, key: MortonKey, points: &[[T; 3]], charges: &[T]) {
        let start = self.points.len();
        self.points.extend_from_slice(points);
        self.charges.extend_from_slice(charges);
        self.index.insert(key, start..self.points.len());
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.points.clear();
        self.charges.clear();
    }

    #[allow(clippy::type_complexity)]
    pub fn get(&self, key: &MortonKey) -> Ghost<(&[[T; 3]], &[T])> {
        if let Some(r) = self.index.get(key) {
            Ghost::Present((&self.points[r.clone()], &self.charges[r.clone()]))
        } else if self.absent.contains(key) {
            Ghost::Absent
        } else {
            Ghost::Unresolved
        }
    }

    pub fn remove(&mut self, key: &MortonKey) -> bool {
        self.index.remove(key).is_some()
    }

    pub fn nleaves(&self) -> usize {
        self.index.len()
    }

    pub fn npoints(&self) -> usize {
        self.index.values().map(|r| r.len()).sum()
    }
}

/// Preallocated receive buffers for remote upward expansions.
#[derive(Clone, Debug, Default)]
pub struct GhostExpansions<T> {
    ncoeffs: usize,
    index: HashMap<MortonKey, usize>,
    absent: HashSet<MortonKey>,
    segments: Vec<Range<usize>>,
    data: Vec<T>,
}

impl<T: Real> GhostExpansions<T> {
    /// Allocate one contiguous segment per neighbor, holding the confirmed boxes in order.
    pub fn allocate(ncoeffs: usize, per_neighbor: &[Vec<MortonKey>], absent: impl IntoIterator<Item = MortonKey>) -> Self {
        let mut index = HashMap::new();
        let mut segments = Vec::with_capacity(per_neighbor.len());
        let mut offset = 0;
        for keys in per_neighbor {
            let start = offset;
            for k in keys {
                index.insert(*k, offset);
                offset += ncoeffs;
            }
            segments.push(start..offset);
        }
        Self {
            ncoeffs,
            index,
            absent: absent.into_iter().collect(),
            segments,
            data: vec![T::zero(); offset],
        }
    }

    /// Buffer segment receiving data from the `i`-th neighbor.
    pub fn segment_mut(&mut self, i: usize) -> &mut [T] {
        let r = self.segments[i].clone();
        &mut self.data[r]
    }

    pub fn segment_len(&self, i: usize) -> usize {
        self.segments[i].len()
    }

    pub fn get(&self, key: &MortonKey) -> Ghost<&[T]> {
        if let Some(&o) = self.index.get(key) {
            Ghost::Present(&self.data[o..o + self.ncoeffs])
        } else if self.absent.contains(key) {
            Ghost::Absent
        } else {
            Ghost::Unresolved
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn remove(&mut self, key: &MortonKey) -> bool {
        self.index.remove(key).is_some()
    }

    pub fn nboxes(&self) -> usize {
        self.index.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &MortonKey> {
        self.index.keys()
    }
}
