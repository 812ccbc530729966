//! The 3D Laplace kernel `1/|x - y|` and direct particle-to-particle sums.
//!
//! No `1/(4 pi)` factor is applied. Coincident points contribute zero.

use rayon::prelude::*;

use crate::error::{FmmError, Result};
use crate::ghost::{Ghost, GhostPoints};
use crate::scalar::Real;
use crate::tree::{InteractionLists, UniformTree};

#[inline(always)]
pub fn laplace_kernel<T: Real>(x: &[T; 3], y: &[T; 3]) -> T {
    let dx = x[0] - y[0];
    let dy = x[1] - y[1];
    let dz = x[2] - y[2];
    let r2 = dx * dx + dy * dy + dz * dz;
    if r2 == T::zero() {
        T::zero()
    } else {
        T::one() / r2.sqrt()
    }
}

/// `out[i] += sum_j K(targets[i], sources[j]) * charges[j]`, summed in source order.
#[inline]
pub fn accumulate<T: Real>(targets: &[[T; 3]], sources: &[[T; 3]], charges: &[T], out: &mut [T]) {
    for (x, f) in targets.iter().zip(out.iter_mut()) {
        let mut acc = T::zero();
        for (y, &s) in sources.iter().zip(charges) {
            acc += laplace_kernel(x, y) * s;
        }
        *f += acc;
    }
}

/// Potential at every target due to every source.
pub fn direct_sum<T: Real>(targets: &[[T; 3]], sources: &[[T; 3]], charges: &[T]) -> Result<Vec<T>> {
    if charges.len() != sources.len() {
        return Err(FmmError::LengthMismatch {
            expected: sources.len(),
            got: charges.len(),
        });
    }
    Ok(targets
        .par_iter()
        .map(|x| {
            let mut acc = T::zero();
            for (y, &s) in sources.iter().zip(charges) {
                acc += laplace_kernel(x, y) * s;
            }
            acc
        })
        .collect())
}

/// Near-field (U list) contribution for every local leaf, added to `out`.
///
/// Sources from leaves outside the local tree come from `ghosts`. Returns the
/// number of target/source pairs evaluated.
pub fn p2p_uli<T: Real>(
    rank: usize,
    tree: &UniformTree,
    lists: &InteractionLists,
    points: &[[T; 3]],
    charges: &[T],
    ghosts: &GhostPoints<T>,
    out: &mut [T],
) -> Result<u64> {
    let leaves = tree.leaves();
    let boxes = tree.boxes();
    let mut pairs = 0u64;
    for (i, range) in tree.leaf_ranges().iter().enumerate() {
        if range.is_empty() {
            continue;
        }
        let targets = &points[range.clone()];
        let f = &mut out[range.clone()];
        for source in lists.u_list(i) {
            if let Some(j) = leaves.index_of(source) {
                let r = tree.leaf_range(j);
                pairs += (targets.len() * r.len()) as u64;
                accumulate(targets, &points[r.clone()], &charges[r], f);
                continue;
            }
            debug_assert!(!boxes.contains(source));
            match ghosts.get(source) {
                Ghost::Present((p, s)) => {
                    pairs += (targets.len() * p.len()) as u64;
                    accumulate(targets, p, s, f);
                }
                Ghost::Absent => {}
                Ghost::Unresolved => return Err(FmmError::UnresolvedDependency { rank, key: *source }),
            }
        }
    }
    Ok(pairs)
}
