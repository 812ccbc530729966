//! Batched translation passes over a box hierarchy.
//!
//! Every pass gathers input columns into a dense block, applies one operator
//! with a single GEMM and scatters the result. Each output column depends only
//! on its own input column, so the same box produces the same bits whether it
//! is processed alone or alongside others. That property is what lets the
//! distributed evaluation reproduce a single-rank run exactly.

use rayon::prelude::*;

use crate::error::{FmmError, Result};
use crate::ghost::Ghost;
use crate::morton::{box_center, MortonKey};
use crate::scalar::Real;
use crate::tree::{transfer_vector, transfer_vector_index, BoxHierarchy, InteractionLists, UniformTree};

use super::{OperatorSet, DOWN_EQUIVALENT_SCALE, UP_CHECK_SCALE};
use crate::kernels::accumulate;
use nalgebra::DMatrix;

/// Upward (`u`) and downward (`d`) equivalent densities, one column-major block per level.
#[derive(Clone, Debug)]
pub struct Expansions<T> {
    ncoeffs: usize,
    top: u32,
    u: Vec<Vec<T>>,
    d: Vec<Vec<T>>,
}

impl<T: Real> Expansions<T> {
    pub fn new(boxes: &BoxHierarchy, ncoeffs: usize) -> Self {
        let u: Vec<Vec<T>> = boxes.levels().iter().map(|l| vec![T::zero(); l.len() * ncoeffs]).collect();
        Self {
            ncoeffs,
            top: boxes.top(),
            d: u.clone(),
            u,
        }
    }

    pub fn ncoeffs(&self) -> usize {
        self.ncoeffs
    }

    fn slot(&self, level: u32) -> usize {
        (level - self.top) as usize
    }

    pub fn u_level(&self, level: u32) -> &[T] {
        &self.u[self.slot(level)]
    }

    pub fn d_level(&self, level: u32) -> &[T] {
        &self.d[self.slot(level)]
    }

    pub fn u(&self, level: u32, index: usize) -> &[T] {
        let n = self.ncoeffs;
        &self.u[self.slot(level)][index * n..(index + 1) * n]
    }

    pub fn d(&self, level: u32, index: usize) -> &[T] {
        let n = self.ncoeffs;
        &self.d[self.slot(level)][index * n..(index + 1) * n]
    }

    pub fn u_mut(&mut self, level: u32, index: usize) -> &mut [T] {
        let n = self.ncoeffs;
        let s = self.slot(level);
        &mut self.u[s][index * n..(index + 1) * n]
    }

    pub fn d_mut(&mut self, level: u32, index: usize) -> &mut [T] {
        let n = self.ncoeffs;
        let s = self.slot(level);
        &mut self.d[s][index * n..(index + 1) * n]
    }

    /// Reset every density to zero, keeping the allocation.
    pub fn clear(&mut self) {
        for v in self.u.iter_mut().chain(self.d.iter_mut()) {
            v.fill(T::zero());
        }
    }
}

fn gemm_into<T: Real>(op: &DMatrix<T>, block: &[T], ncols: usize, out: &mut [T]) {
    let (m, k) = op.shape();
    T::gemm(m, k, ncols, T::one(), op.as_slice(), block, T::zero(), out);
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}

/// Source to upward density for every occupied leaf.
pub fn s2u<T: Real>(ops: &OperatorSet<T>, tree: &UniformTree, points: &[[T; 3]], charges: &[T], exp: &mut Expansions<T>) {
    let n = ops.ncoeffs();
    let leaves = tree.leaves();
    let level = leaves.level();
    let side = tree.cube().side / (1u64 << level) as f64;
    let occupied: Vec<usize> = (0..leaves.len()).filter(|&i| leaves.exists(i)).collect();
    if occupied.is_empty() {
        return;
    }
    let mut check = vec![T::zero(); n * occupied.len()];
    check.par_chunks_mut(n).zip(occupied.par_iter()).for_each(|(col, &i)| {
        let c = box_center(leaves.keys()[i], tree.cube()).to_array();
        let surface = ops.surface(c, side, UP_CHECK_SCALE);
        let r = tree.leaf_range(i);
        accumulate(&surface, &points[r.clone()], &charges[r], col);
    });
    let mut u = vec![T::zero(); check.len()];
    T::gemm(n, n, occupied.len(), T::of_f64(side), ops.uc2e_inv.as_slice(), &check, T::zero(), &mut u);
    for (col, &i) in u.chunks(n).zip(&occupied) {
        exp.u_mut(level, i).copy_from_slice(col);
    }
}

/// Translate upward densities from the bottom level up to `stop_level`.
///
/// Children are processed one octant at a time in `octant_order`, so the sum
/// into each parent follows that order.
pub fn upward<T: Real>(
    ops: &OperatorSet<T>,
    boxes: &BoxHierarchy,
    exp: &mut Expansions<T>,
    stop_level: u32,
    octant_order: &[usize; 8],
) -> Result<()> {
    let n = ops.ncoeffs();
    for level in ((stop_level.max(boxes.top()) + 1)..=boxes.bottom()).rev() {
        let children = boxes.level(level).expect("level in range");
        let parents = boxes.level(level - 1).expect("parent level in range");
        for &oct in octant_order {
            let mut targets = Vec::new();
            let mut block = Vec::new();
            for (i, key) in children.keys().iter().enumerate() {
                if key.octant() != oct || !children.exists(i) {
                    continue;
                }
                let p = parents.index_of(&key.parent()?).ok_or(FmmError::NoChildren(*key))?;
                targets.push(p);
                block.extend_from_slice(exp.u(level, i));
            }
            if targets.is_empty() {
                continue;
            }
            let mut out = vec![T::zero(); block.len()];
            gemm_into(&ops.u2u[oct], &block, targets.len(), &mut out);
            for (col, &p) in out.chunks(n).zip(&targets) {
                add_into(exp.u_mut(level - 1, p), col);
            }
        }
    }
    Ok(())
}

/// V-list contribution to the downward densities of every occupied box at `level`.
///
/// Sources outside `boxes` are resolved through `remote`. Check potentials are
/// accumulated one transfer vector at a time in table order before the single
/// check-to-equivalent solve. Returns the number of translations applied.
pub fn m2l_level<'a, T: Real + 'a, F>(
    ops: &OperatorSet<T>,
    boxes: &BoxHierarchy,
    lists: &InteractionLists,
    level: u32,
    exp: &mut Expansions<T>,
    rank: usize,
    remote: &F,
) -> Result<u64>
where
    F: Fn(&MortonKey) -> Ghost<&'a [T]>,
{
    let n = ops.ncoeffs();
    let boxes_at = boxes.level(level).expect("level in range");
    let targets: Vec<usize> = (0..boxes_at.len()).filter(|&i| boxes_at.exists(i)).collect();
    if targets.is_empty() {
        return Ok(0);
    }
    let u_local = exp.u_level(level);
    let mut buckets: Vec<Vec<(usize, &[T])>> = vec![Vec::new(); ops.m2l.len()];
    for (col, &i) in targets.iter().enumerate() {
        let target = boxes_at.keys()[i];
        for source in lists.v_list(level, i) {
            let data = match boxes_at.index_of(source) {
                Some(j) if boxes_at.exists(j) => &u_local[j * n..(j + 1) * n],
                Some(_) => continue,
                None => match remote(source) {
                    Ghost::Present(u) => u,
                    Ghost::Absent => continue,
                    Ghost::Unresolved => return Err(FmmError::UnresolvedDependency { rank, key: *source }),
                },
            };
            let t = transfer_vector_index(transfer_vector(*source, target)?).expect("V-list pair has a transfer vector");
            buckets[t].push((col, data));
        }
    }
    let mut check = vec![T::zero(); n * targets.len()];
    let mut translations = 0u64;
    for (t, bucket) in buckets.iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        translations += bucket.len() as u64;
        let mut block = Vec::with_capacity(n * bucket.len());
        for (_, u) in bucket {
            block.extend_from_slice(u);
        }
        let mut out = vec![T::zero(); block.len()];
        gemm_into(&ops.m2l[t], &block, bucket.len(), &mut out);
        for (r, (col, _)) in out.chunks(n).zip(bucket) {
            add_into(&mut check[col * n..(col + 1) * n], r);
        }
    }
    if translations == 0 {
        return Ok(0);
    }
    let mut d = vec![T::zero(); check.len()];
    gemm_into(&ops.dc2e_inv, &check, targets.len(), &mut d);
    for (col, &i) in d.chunks(n).zip(&targets) {
        add_into(exp.d_mut(level, i), col);
    }
    Ok(translations)
}

/// Parent to child downward translation into every occupied box at `level`.
pub fn d2d_level<T: Real>(ops: &OperatorSet<T>, boxes: &BoxHierarchy, level: u32, exp: &mut Expansions<T>) -> Result<()> {
    let n = ops.ncoeffs();
    let children = boxes.level(level).expect("level in range");
    let parents = boxes
        .level(level - 1)
        .ok_or_else(|| FmmError::InvalidDepth(format!("level {} has no parent level", level)))?;
    for oct in 0..8 {
        let mut targets = Vec::new();
        let mut block = Vec::new();
        for (i, key) in children.keys().iter().enumerate() {
            if key.octant() != oct || !children.exists(i) {
                continue;
            }
            let p = parents.index_of(&key.parent()?).ok_or(FmmError::NoChildren(*key))?;
            targets.push(i);
            block.extend_from_slice(exp.d(level - 1, p));
        }
        if targets.is_empty() {
            continue;
        }
        let mut out = vec![T::zero(); block.len()];
        gemm_into(&ops.d2d[oct], &block, targets.len(), &mut out);
        for (col, &i) in out.chunks(n).zip(&targets) {
            add_into(exp.d_mut(level, i), col);
        }
    }
    Ok(())
}

/// V-list and parent contributions for every level in `levels`, coarse to fine.
///
/// Each level first adds its V-list term and then the translation of the
/// parent's density when the parent level belongs to `boxes`. Returns the
/// number of V-list translations applied.
#[allow(clippy::too_many_arguments)]
pub fn downward<'a, T: Real + 'a, F>(
    ops: &OperatorSet<T>,
    boxes: &BoxHierarchy,
    lists: &InteractionLists,
    exp: &mut Expansions<T>,
    levels: std::ops::RangeInclusive<u32>,
    rank: usize,
    remote: &F,
) -> Result<u64>
where
    F: Fn(&MortonKey) -> Ghost<&'a [T]>,
{
    let mut translations = 0;
    for level in levels {
        translations += m2l_level(ops, boxes, lists, level, exp, rank, remote)?;
        if level > boxes.top() {
            d2d_level(ops, boxes, level, exp)?;
        }
    }
    Ok(translations)
}

/// Far field at every point from the downward density of its leaf, added to `out`.
pub fn d2t<T: Real>(ops: &OperatorSet<T>, tree: &UniformTree, points: &[[T; 3]], exp: &Expansions<T>, out: &mut [T]) {
    let leaves = tree.leaves();
    let level = leaves.level();
    let side = tree.cube().side / (1u64 << level) as f64;
    let fields: Vec<(usize, Vec<T>)> = (0..leaves.len())
        .into_par_iter()
        .filter(|&i| leaves.exists(i))
        .map(|i| {
            let c = box_center(leaves.keys()[i], tree.cube()).to_array();
            let equiv = ops.surface(c, side, DOWN_EQUIVALENT_SCALE);
            let r = tree.leaf_range(i);
            let mut f = vec![T::zero(); r.len()];
            accumulate(&points[r], &equiv, exp.d(level, i), &mut f);
            (i, f)
        })
        .collect();
    for (i, f) in fields {
        add_into(&mut out[tree.leaf_range(i)], &f);
    }
}
