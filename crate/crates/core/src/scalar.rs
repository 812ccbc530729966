//! Floating point types the FMM can run in.

use nalgebra::RealField;

/// A real scalar usable for expansions and transport payloads.
pub trait Real: RealField + Copy + Default + Send + Sync + 'static + std::fmt::Debug {
    /// Width in bits, as used by the message size formula.
    const BITS: u32;
    /// Relative singular value cutoff for the check-to-equivalent pseudo-inverses.
    const SVD_CUTOFF: f64;
    /// Short name recorded in manifests.
    const NAME: &'static str;

    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on column-major buffers, `a` is `m x k`, `b` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

impl Real for f64 {
    const BITS: u32 = 64;
    const SVD_CUTOFF: f64 = 1e-10;
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn of_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: the slices cover the column-major extents asserted above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                1,
                m as isize,
                b.as_ptr(),
                1,
                k as isize,
                beta,
                c.as_mut_ptr(),
                1,
                m as isize,
            );
        }
    }
}

impl Real for f32 {
    const BITS: u32 = 32;
    const SVD_CUTOFF: f64 = 1e-5;
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn of_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: the slices cover the column-major extents asserted above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                1,
                m as isize,
                b.as_ptr(),
                1,
                k as isize,
                beta,
                c.as_mut_ptr(),
                1,
                m as isize,
            );
        }
    }
}
