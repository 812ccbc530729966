//! C ABI over the distributed FMM solver.
//!
//! All functions return an [`FmmStatus`]; on failure a message is available
//! from [`fmm_last_error`] on the same thread. Solvers are opaque handles
//! created by [`fmm_solver_new`] and released by [`fmm_solver_free`].
//! Points are passed as `3 * n` doubles (`x0 y0 z0 x1 ...`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fmm_core::distributed::{self, DistributedSolver, RankOutput};
use fmm_core::error::FmmError;
use fmm_core::geometry::Point3;
use fmm_core::kernels;
use fmm_core::operators;
use fmm_core::scalar::Real;
use fmm_core::transport::TransportStats;
use serde::Serialize;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmmStatus {
    Ok = 0,
    /// Bad pointer or size arguments, including an unknown precision.
    InvalidArgument = 1,
    InvalidConfig = 2,
    /// Input points rejected, for example an empty set or a non-finite coordinate.
    InvalidInput = 3,
    TooFewPoints = 4,
    UnresolvedDependency = 5,
    Transport = 6,
    Numerical = 7,
    Io = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// Arithmetic of the solver, passed to [`fmm_solver_new`] as its integer value.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmmPrecision {
    F32 = 32,
    F64 = 64,
}

/// Solver configuration; fill with [`fmm_config_default`] and adjust.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FmmConfig {
    pub global_depth: u32,
    pub local_depth: u32,
    pub order: u32,
    pub samples_per_rank: u32,
    pub seed: u64,
    /// Nonzero to evaluate the near field while ghost expansions are in flight.
    pub overlap_near_field: u8,
}

enum Inner {
    F32(DistributedSolver<f32>, Vec<RankOutput<f32>>),
    F64(DistributedSolver<f64>, Vec<RankOutput<f64>>),
}

/// Opaque solver handle.
pub struct FmmSolver {
    inner: Inner,
    n: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &FmmError) -> FmmStatus {
    use FmmError::*;
    match e.root_cause() {
        NoPoints | NonFinite { .. } | OutsideCube { .. } | PointOutsideRoots { .. } | Unsorted(_) => FmmStatus::InvalidInput,
        LengthMismatch { .. } => FmmStatus::InvalidArgument,
        InvalidLevel(_) | InvalidDepth(_) | InvalidOrder(_) | InvalidConfig(_) | InvalidLayout(_) | UnsupportedBackend(_) => {
            FmmStatus::InvalidConfig
        }
        TooFewPoints { .. } => FmmStatus::TooFewPoints,
        UnresolvedDependency { .. } => FmmStatus::UnresolvedDependency,
        CollectiveMismatch { .. } | Deadlock { .. } | Aborted { .. } | Transport { .. } => FmmStatus::Transport,
        Factorization { .. } => FmmStatus::Numerical,
        BadFile(_) | Io(_) | Csv(_) | Json(_) => FmmStatus::Io,
        _ => FmmStatus::Internal,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (FmmStatus, String)>) -> FmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            FmmStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            FmmStatus::Internal
        }
    }
}

fn fail(e: FmmError) -> (FmmStatus, String) {
    (status_of(&e), e.to_string())
}

fn bad(msg: &str) -> (FmmStatus, String) {
    (FmmStatus::InvalidArgument, msg.to_string())
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (FmmStatus, String)> {
    if ptr.is_null() {
        return Err(bad(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn points_of(coords: &[f64]) -> Vec<Point3> {
    coords.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect()
}

/// Message for the last failed call on this thread; empty after a success.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Defaults: global depth 1, local depth 2, order 6, 64 samples per rank, seed 0, overlap on.
///
/// # Safety
/// `out` must be null or point to writable memory for one `FmmConfig`.
#[no_mangle]
pub unsafe extern "C" fn fmm_config_default(out: *mut FmmConfig) -> FmmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| bad("out is null"))?;
        let d = distributed::FmmConfig::default();
        *out = FmmConfig {
            global_depth: d.global_depth,
            local_depth: d.local_depth,
            order: d.order as u32,
            samples_per_rank: d.samples_per_rank as u32,
            seed: d.seed,
            overlap_near_field: d.overlap_near_field as u8,
        };
        Ok(())
    })
}

/// Number of coefficients per box for expansion order `order`, or 0 if `order < 2`.
#[no_mangle]
pub extern "C" fn fmm_expansion_length(order: u32) -> usize {
    if order < 2 {
        0
    } else {
        operators::ncoeffs(order as usize)
    }
}

/// Bytes one rank sends to the nominated rank in the global gather.
#[no_mangle]
pub extern "C" fn fmm_global_message_size(n_roots: usize, order: u32, bits: u32) -> usize {
    if order < 2 {
        0
    } else {
        distributed::global_message_size(n_roots, order as usize, bits)
    }
}

/// Direct `O(n_targets * n_sources)` Laplace potentials.
///
/// # Safety
/// `targets` holds `3 * n_targets` doubles, `sources` `3 * n_sources`,
/// `charges` `n_sources` and `out` has room for `n_targets`.
#[no_mangle]
pub unsafe extern "C" fn fmm_direct_sum(
    targets: *const f64,
    n_targets: usize,
    sources: *const f64,
    charges: *const f64,
    n_sources: usize,
    out: *mut f64,
) -> FmmStatus {
    guard(|| {
        let t = slice(targets, 3 * n_targets, "targets")?;
        let s = slice(sources, 3 * n_sources, "sources")?;
        let q = slice(charges, n_sources, "charges")?;
        if out.is_null() {
            return Err(bad("out is null"));
        }
        let t: Vec<[f64; 3]> = t.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let s: Vec<[f64; 3]> = s.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let f = kernels::direct_sum(&t, &s, q).map_err(fail)?;
        std::slice::from_raw_parts_mut(out, n_targets).copy_from_slice(&f);
        Ok(())
    })
}

/// Build a solver over `ranks` simulated ranks and run the distributed setup.
///
/// # Safety
/// `points` holds `3 * n` doubles, `charges` `n`, `config` is null (defaults)
/// or valid, and `out` is writable. `precision` is 32 or 64. On success `*out` owns a handle for [`fmm_solver_free`].
#[no_mangle]
pub unsafe extern "C" fn fmm_solver_new(
    points: *const f64,
    charges: *const f64,
    n: usize,
    ranks: usize,
    config: *const FmmConfig,
    precision: u32,
    out: *mut *mut FmmSolver,
) -> FmmStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad("out is null"));
        }
        *out = std::ptr::null_mut();
        let coords = slice(points, 3 * n, "points")?;
        let q = slice(charges, n, "charges")?;
        let config = match config.as_ref() {
            Some(c) => distributed::FmmConfig {
                global_depth: c.global_depth,
                local_depth: c.local_depth,
                order: c.order as usize,
                samples_per_rank: c.samples_per_rank as usize,
                seed: c.seed,
                overlap_near_field: c.overlap_near_field != 0,
            },
            None => distributed::FmmConfig::default(),
        };
        let pts = points_of(coords);
        let inner = match precision {
            p if p == FmmPrecision::F32 as u32 => Inner::F32(DistributedSolver::new(&pts, q, ranks, config).map_err(fail)?, Vec::new()),
            p if p == FmmPrecision::F64 as u32 => {
                Inner::F64(DistributedSolver::new(&pts, q, ranks, config).map_err(fail)?, Vec::new())
            }
            p => return Err(bad(&format!("unknown precision {p}"))),
        };
        *out = Box::into_raw(Box::new(FmmSolver { inner, n }));
        Ok(())
    })
}

/// Release a solver. Null is accepted.
///
/// # Safety
/// `solver` must come from [`fmm_solver_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fmm_solver_free(solver: *mut FmmSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

fn evaluate_into<T: Real>(solver: &mut DistributedSolver<T>, last: &mut Vec<RankOutput<T>>, out: &mut [f64]) -> Result<(), FmmError> {
    let eval = solver.evaluate()?;
    for (o, v) in out.iter_mut().zip(&eval.potentials) {
        *o = v.as_f64();
    }
    *last = eval.ranks;
    Ok(())
}

/// Evaluate potentials at every point, written in input order.
///
/// # Safety
/// `solver` is a live handle and `potentials` has room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fmm_solver_evaluate(solver: *mut FmmSolver, potentials: *mut f64, n: usize) -> FmmStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| bad("solver is null"))?;
        if potentials.is_null() {
            return Err(bad("potentials is null"));
        }
        if n != s.n {
            return Err(bad(&format!("potentials has length {n}, solver has {} points", s.n)));
        }
        let out = std::slice::from_raw_parts_mut(potentials, n);
        match &mut s.inner {
            Inner::F32(solver, last) => evaluate_into(solver, last, out),
            Inner::F64(solver, last) => evaluate_into(solver, last, out),
        }
        .map_err(fail)
    })
}

/// Replace the charges (input order) without redoing the setup.
///
/// # Safety
/// `solver` is a live handle and `charges` holds `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fmm_solver_update_charges(solver: *mut FmmSolver, charges: *const f64, n: usize) -> FmmStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| bad("solver is null"))?;
        let q = slice(charges, n, "charges")?;
        match &mut s.inner {
            Inner::F32(solver, _) => solver.update_charges(q),
            Inner::F64(solver, _) => solver.update_charges(q),
        }
        .map_err(fail)
    })
}

/// Fault hook for tests: lose one received V ghost on `rank` during the next evaluations.
///
/// # Safety
/// `solver` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn fmm_solver_inject_fault(solver: *mut FmmSolver, rank: usize) -> FmmStatus {
    guard(|| {
        let s = solver.as_mut().ok_or_else(|| bad("solver is null"))?;
        let fault = Some(distributed::Fault::DropVGhost { rank });
        match &mut s.inner {
            Inner::F32(solver, _) => solver.set_fault(fault),
            Inner::F64(solver, _) => solver.set_fault(fault),
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct RankJson<'a> {
    rank: usize,
    setup: &'a distributed::SetupReport,
    setup_timings: &'a distributed::SetupTimings,
    setup_transport: &'a TransportStats,
    /// Counters of the latest evaluation, absent before the first one.
    runtime_transport: Option<&'a TransportStats>,
    runtime_timings: Option<&'a distributed::RuntimeTimings>,
}

#[derive(Serialize)]
struct StatsJson<'a> {
    precision: &'static str,
    points: usize,
    ranks: Vec<RankJson<'a>>,
}

fn stats_json<T: Real>(solver: &DistributedSolver<T>, last: &[RankOutput<T>]) -> Result<String, FmmError> {
    let ranks = solver
        .ranks()
        .iter()
        .enumerate()
        .map(|(r, state)| RankJson {
            rank: r,
            setup: state.report(),
            setup_timings: state.setup_timings(),
            setup_transport: &solver.setup_stats()[r],
            runtime_transport: last.get(r).map(|o| &o.stats),
            runtime_timings: last.get(r).map(|o| &o.timings),
        })
        .collect();
    Ok(serde_json::to_string(&StatsJson {
        precision: T::NAME,
        points: solver.total_points(),
        ranks,
    })?)
}

/// Per-rank setup and latest runtime statistics as a JSON string.
///
/// # Safety
/// `solver` is a live handle and `out` is writable. Free the string with [`fmm_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fmm_solver_stats_json(solver: *const FmmSolver, out: *mut *mut c_char) -> FmmStatus {
    guard(|| {
        let s = solver.as_ref().ok_or_else(|| bad("solver is null"))?;
        if out.is_null() {
            return Err(bad("out is null"));
        }
        let json = match &s.inner {
            Inner::F32(solver, last) => stats_json(solver, last),
            Inner::F64(solver, last) => stats_json(solver, last),
        }
        .map_err(fail)?;
        *out = CString::new(json).map_err(|_| bad("interior nul"))?.into_raw();
        Ok(())
    })
}

/// Free a string returned by this library. Null is accepted.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fmm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copy of the last error message, for Rust callers.
pub fn last_error() -> String {
    // SAFETY: the thread-local buffer is a valid C string until the next call.
    unsafe { CStr::from_ptr(fmm_last_error()) }.to_string_lossy().into_owned()
}
