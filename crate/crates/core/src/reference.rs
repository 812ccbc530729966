//! Single-rank FMM over one tree rooted at the whole domain.
//!
//! It shares every pass with the distributed code. Run on the same globally
//! sorted points, it produces the same bits as the distributed pipeline, which
//! is what makes it a useful oracle.

use std::sync::Arc;

use crate::error::{FmmError, Result};
use crate::geometry::{fit_domain, BoundingCube, Point3, DEFAULT_MARGIN};
use crate::ghost::{Ghost, GhostPoints};
use crate::kernels::p2p_uli;
use crate::morton::{encode, MortonKey};
use crate::operators::{d2t, downward, s2u, upward, Expansions, OperatorSet};
use crate::scalar::Real;
use crate::tree::{InteractionLists, UniformTree};

/// Sort points by `(leaf key, index)`, the order every rank and the reference use.
///
/// Returns the permutation: `order[k]` is the original index of the `k`-th sorted point.
pub fn sorted_order(points: &[Point3], cube: &BoundingCube, depth: u32) -> Result<Vec<usize>> {
    let keys = points
        .iter()
        .map(|p| encode(p, depth, cube))
        .collect::<Result<Vec<MortonKey>>>()?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_unstable_by_key(|&i| (keys[i], i));
    Ok(order)
}

/// Reference FMM with state kept for repeated evaluation.
pub struct ReferenceFmm<T: Real> {
    ops: Arc<OperatorSet<T>>,
    tree: UniformTree,
    lists: InteractionLists,
    order: Vec<usize>,
    points: Vec<[T; 3]>,
    charges: Vec<T>,
    exp: Expansions<T>,
}

impl<T: Real> ReferenceFmm<T> {
    /// Build the tree of depth `depth` over `points` in the cube fitted to them.
    pub fn new(points: &[Point3], charges: &[f64], depth: u32, ops: Arc<OperatorSet<T>>) -> Result<Self> {
        let cube = fit_domain(points, DEFAULT_MARGIN)?;
        Self::with_cube(points, charges, cube, depth, ops)
    }

    pub fn with_cube(
        points: &[Point3],
        charges: &[f64],
        cube: BoundingCube,
        depth: u32,
        ops: Arc<OperatorSet<T>>,
    ) -> Result<Self> {
        if charges.len() != points.len() {
            return Err(FmmError::LengthMismatch {
                expected: points.len(),
                got: charges.len(),
            });
        }
        let order = sorted_order(points, &cube, depth)?;
        let sorted: Vec<Point3> = order.iter().map(|&i| points[i]).collect();
        let tree = UniformTree::full(&sorted, cube, depth)?;
        let lists = InteractionLists::new(tree.boxes());
        let exp = Expansions::new(tree.boxes(), ops.ncoeffs());
        Ok(Self {
            points: sorted.iter().map(|p| p.to_array().map(T::of_f64)).collect(),
            charges: order.iter().map(|&i| T::of_f64(charges[i])).collect(),
            ops,
            tree,
            lists,
            order,
            exp,
        })
    }

    pub fn tree(&self) -> &UniformTree {
        &self.tree
    }

    pub fn expansions(&self) -> &Expansions<T> {
        &self.exp
    }

    /// Replace the charges, given in original point order.
    pub fn set_charges(&mut self, charges: &[f64]) -> Result<()> {
        if charges.len() != self.order.len() {
            return Err(FmmError::LengthMismatch {
                expected: self.order.len(),
                got: charges.len(),
            });
        }
        self.charges = self.order.iter().map(|&i| T::of_f64(charges[i])).collect();
        Ok(())
    }

    /// Potentials in sorted order.
    pub fn evaluate_sorted(&mut self) -> Result<Vec<T>> {
        let n = self.points.len();
        let ops = &*self.ops;
        let boxes = self.tree.boxes();
        let mut near = vec![T::zero(); n];
        p2p_uli(0, &self.tree, &self.lists, &self.points, &self.charges, &GhostPoints::new(), &mut near)?;

        self.exp.clear();
        s2u(ops, &self.tree, &self.points, &self.charges, &mut self.exp);
        upward(ops, boxes, &mut self.exp, 0, &[0, 1, 2, 3, 4, 5, 6, 7])?;
        let none = |_: &MortonKey| Ghost::Unresolved;
        downward(ops, boxes, &self.lists, &mut self.exp, 1..=boxes.bottom(), 0, &none)?;

        let mut far = vec![T::zero(); n];
        d2t(ops, &self.tree, &self.points, &self.exp, &mut far);
        Ok(far.into_iter().zip(near).map(|(a, b)| a + b).collect())
    }

    /// Potentials in the original point order.
    pub fn evaluate(&mut self) -> Result<Vec<T>> {
        let sorted = self.evaluate_sorted()?;
        let mut out = vec![T::zero(); sorted.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = sorted[k];
        }
        Ok(out)
    }
}

/// Relative L2 error of `approx` against `exact`, computed in `f64`.
pub fn relative_l2<A: Real, B: Real>(approx: &[A], exact: &[B]) -> f64 {
    assert_eq!(approx.len(), exact.len());
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (a, e) in approx.iter().zip(exact) {
        let e = e.as_f64();
        let d = a.as_f64() - e;
        num += d * d;
        den += e * e;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
