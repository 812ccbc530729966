//! Kernel-independent FMM operators for the Laplace kernel.
//!
//! Boxes carry equivalent densities on cube-surface grids. The upward
//! equivalent surface sits at `1.05` box sides and is fitted on a check
//! surface at `2.95` sides; the downward pair mirrors that. Because `1/r` is
//! homogeneous of degree -1, translation operators expressed between
//! equivalent densities do not depend on the level, so they are built once for
//! a reference box of side one.

mod passes;

pub use passes::{d2d_level, d2t, downward, m2l_level, s2u, upward, Expansions};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{FmmError, Result};
use crate::geometry::Point3;
use crate::kernels::laplace_kernel;
use crate::scalar::Real;
use crate::tree::v_transfer_vectors;

pub const UP_EQUIVALENT_SCALE: f64 = 1.05;
pub const UP_CHECK_SCALE: f64 = 2.95;
pub const DOWN_EQUIVALENT_SCALE: f64 = 2.95;
pub const DOWN_CHECK_SCALE: f64 = 1.05;

/// Length of a `u` or `d` vector for expansion order `order`: `6 (order - 1)^2 + 2`.
pub fn ncoeffs(order: usize) -> usize {
    6 * (order - 1) * (order - 1) + 2
}

/// Points on the surface of a cube with `order` points per edge.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    pub order: usize,
    pub points: Vec<Point3>,
}

/// Lattice points of `{0..order}^3` on the cube boundary, mapped to `[-1, 1]^3`.
fn unit_surface(order: usize) -> Vec<[f64; 3]> {
    let last = order - 1;
    let mut out = Vec::with_capacity(ncoeffs(order));
    let map = |i: usize| 2.0 * i as f64 / last as f64 - 1.0;
    for i in 0..order {
        for j in 0..order {
            for k in 0..order {
                if [i, j, k].iter().any(|&c| c == 0 || c == last) {
                    out.push([map(i), map(j), map(k)]);
                }
            }
        }
    }
    out
}

/// Surface grid of the cube of side `side * scale` centred at `center`.
pub fn surface_grid(order: usize, center: Point3, side: f64, scale: f64) -> Result<SurfaceGrid> {
    if order < 2 {
        return Err(FmmError::InvalidOrder(order));
    }
    let half = 0.5 * side * scale;
    let points = unit_surface(order)
        .into_iter()
        .map(|s| Point3::new(center.x + s[0] * half, center.y + s[1] * half, center.z + s[2] * half))
        .collect();
    Ok(SurfaceGrid { order, points })
}

/// Surface offsets from a box centre, `offset = s * side * scale / 2`.
fn offsets(unit: &[[f64; 3]], center: [f64; 3], side: f64, scale: f64) -> Vec<[f64; 3]> {
    let half = 0.5 * side * scale;
    unit.iter()
        .map(|s| [center[0] + s[0] * half, center[1] + s[1] * half, center[2] + s[2] * half])
        .collect()
}

fn kernel_matrix(targets: &[[f64; 3]], sources: &[[f64; 3]]) -> DMatrix<f64> {
    DMatrix::from_fn(targets.len(), sources.len(), |i, j| laplace_kernel(&targets[i], &sources[j]))
}

/// Conditioning of a regularized inverse.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct InverseDiagnostics {
    pub rank: usize,
    pub size: usize,
    pub condition: f64,
}

/// Pseudo-inverse with singular values below `cutoff * sigma_max` discarded.
fn truncated_pinv(m: DMatrix<f64>, what: &'static str, cutoff: f64) -> Result<(DMatrix<f64>, InverseDiagnostics)> {
    let (rows, cols) = m.shape();
    let svd = nalgebra::linalg::SVD::try_new(m, true, true, f64::EPSILON, 0).ok_or_else(|| {
        FmmError::Factorization {
            what,
            rows,
            cols,
            detail: "SVD did not converge".into(),
        }
    })?;
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    if !(smax > 0.0 && smax.is_finite()) {
        return Err(FmmError::Factorization {
            what,
            rows,
            cols,
            detail: format!("largest singular value is {smax}"),
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let threshold = cutoff * smax;
    let mut kept = 0;
    let mut smin = smax;
    let mut scaled_ut = u.transpose();
    for (i, &s) in sigma.iter().enumerate() {
        if s > threshold {
            kept += 1;
            smin = smin.min(s);
            scaled_ut.row_mut(i).scale_mut(1.0 / s);
        } else {
            scaled_ut.row_mut(i).fill(0.0);
        }
    }
    let pinv = v_t.transpose() * scaled_ut;
    Ok((
        pinv,
        InverseDiagnostics {
            rank: kept,
            size: rows.min(cols),
            condition: smax / smin,
        },
    ))
}

fn cast<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(T::of_f64)
}

/// Diagnostics recorded alongside results.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OperatorDiagnostics {
    pub order: usize,
    pub ncoeffs: usize,
    pub svd_cutoff: f64,
    pub upward: InverseDiagnostics,
    pub downward: InverseDiagnostics,
}

/// Precomputed operators for boxes of side `side` (children of side `side / 2`).
#[derive(Clone, Debug)]
pub struct OperatorSet<T> {
    order: usize,
    ncoeffs: usize,
    side: f64,
    unit: Vec<[f64; 3]>,
    /// Upward check potential to upward equivalent density.
    pub uc2e_inv: DMatrix<T>,
    /// Downward check potential to downward equivalent density.
    pub dc2e_inv: DMatrix<T>,
    /// Child upward density to parent upward density, by child octant.
    pub u2u: Vec<DMatrix<T>>,
    /// Parent downward density to child downward density, by child octant.
    pub d2d: Vec<DMatrix<T>>,
    /// Source upward density to target downward check potential, by transfer vector.
    pub m2l: Vec<DMatrix<T>>,
    diagnostics: OperatorDiagnostics,
}

impl<T: Real> OperatorSet<T> {
    /// Operators for a reference box of side one, with the precision's default SVD cutoff.
    pub fn new(order: usize) -> Result<Self> {
        Self::at_side(order, 1.0, T::SVD_CUTOFF)
    }

    /// Operators for boxes of side `side`, built directly in that geometry.
    pub fn at_side(order: usize, side: f64, cutoff: f64) -> Result<Self> {
        if order < 2 {
            return Err(FmmError::InvalidOrder(order));
        }
        let unit = unit_surface(order);
        let n = unit.len();
        let zero = [0.0; 3];
        let up_equiv = offsets(&unit, zero, side, UP_EQUIVALENT_SCALE);
        let up_check = offsets(&unit, zero, side, UP_CHECK_SCALE);
        let down_equiv = offsets(&unit, zero, side, DOWN_EQUIVALENT_SCALE);
        let down_check = offsets(&unit, zero, side, DOWN_CHECK_SCALE);

        let (uc2e_inv, up_diag) = truncated_pinv(kernel_matrix(&up_check, &up_equiv), "upward check-to-equivalent", cutoff)?;
        let (dc2e_inv, down_diag) =
            truncated_pinv(kernel_matrix(&down_check, &down_equiv), "downward check-to-equivalent", cutoff)?;

        let half = 0.5 * side;
        let (child_dc2e_inv, _) = truncated_pinv(
            kernel_matrix(
                &offsets(&unit, zero, half, DOWN_CHECK_SCALE),
                &offsets(&unit, zero, half, DOWN_EQUIVALENT_SCALE),
            ),
            "child downward check-to-equivalent",
            cutoff,
        )?;

        let mut u2u = Vec::with_capacity(8);
        let mut d2d = Vec::with_capacity(8);
        for oct in 0..8 {
            let c = child_center(oct, side);
            let child_up_equiv = offsets(&unit, c, half, UP_EQUIVALENT_SCALE);
            u2u.push(cast(&(&uc2e_inv * kernel_matrix(&up_check, &child_up_equiv))));
            let child_down_check = offsets(&unit, c, half, DOWN_CHECK_SCALE);
            d2d.push(cast(&(&child_dc2e_inv * kernel_matrix(&child_down_check, &down_equiv))));
        }

        let m2l = v_transfer_vectors()
            .iter()
            .map(|t| {
                let c = t.map(|x| x as f64 * side);
                cast(&kernel_matrix(&down_check, &offsets(&unit, c, side, UP_EQUIVALENT_SCALE)))
            })
            .collect();

        Ok(Self {
            order,
            ncoeffs: n,
            side,
            unit,
            uc2e_inv: cast(&uc2e_inv),
            dc2e_inv: cast(&dc2e_inv),
            u2u,
            d2d,
            m2l,
            diagnostics: OperatorDiagnostics {
                order,
                ncoeffs: n,
                svd_cutoff: cutoff,
                upward: up_diag,
                downward: down_diag,
            },
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn ncoeffs(&self) -> usize {
        self.ncoeffs
    }

    /// Side of the reference box the matrices were built for.
    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn diagnostics(&self) -> &OperatorDiagnostics {
        &self.diagnostics
    }

    /// Surface points around `center` for a box of side `side`, in precision `T`.
    pub fn surface(&self, center: [f64; 3], side: f64, scale: f64) -> Vec<[T; 3]> {
        offsets(&self.unit, center, side, scale)
            .into_iter()
            .map(|p| p.map(T::of_f64))
            .collect()
    }

    /// Evaluate the field of upward equivalent density `u` of a box at `targets`.
    pub fn evaluate_upward(&self, center: [f64; 3], side: f64, u: &[T], targets: &[[T; 3]]) -> Vec<T> {
        let equiv = self.surface(center, side, UP_EQUIVALENT_SCALE);
        let mut out = vec![T::zero(); targets.len()];
        crate::kernels::accumulate(targets, &equiv, u, &mut out);
        out
    }

    /// Evaluate the field of downward equivalent density `d` of a box at `targets`.
    pub fn evaluate_downward(&self, center: [f64; 3], side: f64, d: &[T], targets: &[[T; 3]]) -> Vec<T> {
        let equiv = self.surface(center, side, DOWN_EQUIVALENT_SCALE);
        let mut out = vec![T::zero(); targets.len()];
        crate::kernels::accumulate(targets, &equiv, d, &mut out);
        out
    }
}

/// Centre of child `oct` of a box of side `side` centred at the origin.
fn child_center(oct: usize, side: f64) -> [f64; 3] {
    let q = 0.25 * side;
    let sign = |bit: usize| if bit == 1 { q } else { -q };
    [sign((oct >> 2) & 1), sign((oct >> 1) & 1), sign(oct & 1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_counts() {
        let c = Point3::new(0.0, 0.0, 0.0);
        assert_eq!(surface_grid(2, c, 1.0, 1.0).unwrap().points.len(), 8);
        assert_eq!(surface_grid(3, c, 1.0, 1.0).unwrap().points.len(), 26);
        assert_eq!(surface_grid(6, c, 1.0, 1.0).unwrap().points.len(), 152);
        for p in 2..10 {
            assert_eq!(surface_grid(p, c, 1.0, 1.0).unwrap().points.len(), ncoeffs(p));
        }
        assert!(matches!(surface_grid(1, c, 1.0, 1.0), Err(FmmError::InvalidOrder(1))));
    }

    #[test]
    fn surface_points_on_boundary() {
        let c = Point3::new(1.0, -2.0, 0.5);
        let grid = surface_grid(5, c, 2.0, 1.05).unwrap();
        let half = 1.05;
        for p in grid.points {
            let d = [p.x - c.x, p.y - c.y, p.z - c.z];
            let m = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            assert!((m - half).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_octahedral_symmetry() {
        let unit = unit_surface(4);
        let set: std::collections::HashSet<[i64; 3]> =
            unit.iter().map(|p| p.map(|x| (x * 3.0).round() as i64)).collect();
        for p in &set {
            assert!(set.contains(&[p[1], p[2], p[0]]));
            assert!(set.contains(&[-p[0], p[1], p[2]]));
            assert!(set.contains(&[p[1], p[0], p[2]]));
        }
    }

    #[test]
    fn m2l_count_and_shapes() {
        let ops = OperatorSet::<f64>::new(3).unwrap();
        assert_eq!(ops.m2l.len(), 316);
        assert_eq!(ops.u2u.len(), 8);
        assert_eq!(ops.d2d.len(), 8);
        assert_eq!(ops.uc2e_inv.shape(), (26, 26));
        assert!(ops.diagnostics().upward.rank > 0);
    }

    #[test]
    fn operators_are_level_homogeneous() {
        let h = 0.75;
        let a = OperatorSet::<f64>::at_side(5, h, 1e-10).unwrap();
        let b = OperatorSet::<f64>::at_side(5, h / 2.0, 1e-10).unwrap();
        let dev = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).abs().max();
        for oct in 0..8 {
            assert!(dev(&a.u2u[oct], &b.u2u[oct]) <= 1e-12);
            assert!(dev(&a.d2d[oct], &b.d2d[oct]) <= 1e-12);
        }
        for t in 0..316 {
            assert!(dev(&(&a.m2l[t] * 2.0), &b.m2l[t]) <= 1e-12);
            let full_a = &a.dc2e_inv * &a.m2l[t];
            let full_b = &b.dc2e_inv * &b.m2l[t];
            assert!(dev(&full_a, &full_b) <= 1e-12);
        }
        assert!(dev(&(&a.uc2e_inv / 2.0), &b.uc2e_inv) <= 1e-12);
    }
}
