/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef FMM_H
#define FMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum FmmStatus {
  FMM_STATUS_OK = 0,
  // Bad pointer or size arguments, including an unknown precision.
  FMM_STATUS_INVALID_ARGUMENT = 1,
  FMM_STATUS_INVALID_CONFIG = 2,
  // Input points rejected, for example an empty set or a non-finite coordinate.
  FMM_STATUS_INVALID_INPUT = 3,
  FMM_STATUS_TOO_FEW_POINTS = 4,
  FMM_STATUS_UNRESOLVED_DEPENDENCY = 5,
  FMM_STATUS_TRANSPORT = 6,
  FMM_STATUS_NUMERICAL = 7,
  FMM_STATUS_IO = 8,
  // A Rust panic was caught at the boundary.
  FMM_STATUS_INTERNAL = 9,
} FmmStatus;

// Arithmetic of the solver, passed to [`fmm_solver_new`] as its integer value.
typedef enum FmmPrecision {
  FMM_PRECISION_F32 = 32,
  FMM_PRECISION_F64 = 64,
} FmmPrecision;

// Opaque solver handle.
typedef struct FmmSolver FmmSolver;

// Solver configuration; fill with [`fmm_config_default`] and adjust.
typedef struct FmmConfig {
  uint32_t global_depth;
  uint32_t local_depth;
  uint32_t order;
  uint32_t samples_per_rank;
  uint64_t seed;
  // Nonzero to evaluate the near field while ghost expansions are in flight.
  uint8_t overlap_near_field;
} FmmConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
//
// The pointer stays valid until the next call into this library on the same thread.
const char *fmm_last_error(void);

// Defaults: global depth 1, local depth 2, order 6, 64 samples per rank, seed 0, overlap on.
//
// # Safety
// `out` must be null or point to writable memory for one `FmmConfig`.
enum FmmStatus fmm_config_default(struct FmmConfig *out);

// Number of coefficients per box for expansion order `order`, or 0 if `order < 2`.
size_t fmm_expansion_length(uint32_t order);

// Bytes one rank sends to the nominated rank in the global gather.
size_t fmm_global_message_size(size_t n_roots, uint32_t order, uint32_t bits);

// Direct `O(n_targets * n_sources)` Laplace potentials.
//
// # Safety
// `targets` holds `3 * n_targets` doubles, `sources` `3 * n_sources`,
// `charges` `n_sources` and `out` has room for `n_targets`.
enum FmmStatus fmm_direct_sum(const double *targets,
                              size_t n_targets,
                              const double *sources,
                              const double *charges,
                              size_t n_sources,
                              double *out);

// Build a solver over `ranks` simulated ranks and run the distributed setup.
//
// # Safety
// `points` holds `3 * n` doubles, `charges` `n`, `config` is null (defaults)
// or valid, and `out` is writable. `precision` is 32 or 64. On success `*out` owns a handle for [`fmm_solver_free`].
enum FmmStatus fmm_solver_new(const double *points,
                              const double *charges,
                              size_t n,
                              size_t ranks,
                              const struct FmmConfig *config,
                              uint32_t precision,
                              struct FmmSolver **out);

// Release a solver. Null is accepted.
//
// # Safety
// `solver` must come from [`fmm_solver_new`] and not be used afterwards.
void fmm_solver_free(struct FmmSolver *solver);

// Evaluate potentials at every point, written in input order.
//
// # Safety
// `solver` is a live handle and `potentials` has room for `n` doubles.
enum FmmStatus fmm_solver_evaluate(struct FmmSolver *solver, double *potentials, size_t n);

// Replace the charges (input order) without redoing the setup.
//
// # Safety
// `solver` is a live handle and `charges` holds `n` doubles.
enum FmmStatus fmm_solver_update_charges(struct FmmSolver *solver, const double *charges, size_t n);

// Fault hook for tests: lose one received V ghost on `rank` during the next evaluations.
//
// # Safety
// `solver` is a live handle.
enum FmmStatus fmm_solver_inject_fault(struct FmmSolver *solver, size_t rank);

// Per-rank setup and latest runtime statistics as a JSON string.
//
// # Safety
// `solver` is a live handle and `out` is writable. Free the string with [`fmm_string_free`].
enum FmmStatus fmm_solver_stats_json(const struct FmmSolver *solver, char **out);

// Free a string returned by this library. Null is accepted.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void fmm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FMM_H */
