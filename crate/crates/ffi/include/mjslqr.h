#ifndef MJSLQR_H
#define MJSLQR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MJS_OK 0

#define MJS_ERR_NULL_POINTER 1

#define MJS_ERR_INVALID_UTF8 2

#define MJS_ERR_BUFFER_SIZE 3

#define MJS_ERR_PANIC 4

#define MJS_ERR_DIM_MISMATCH 10

#define MJS_ERR_INDEX_OUT_OF_RANGE 11

#define MJS_ERR_NOT_ERGODIC 12

#define MJS_ERR_NO_CONVERGENCE 13

#define MJS_ERR_PARSE 14

#define MJS_ERR_LOAD_INVALID 15

#define MJS_ERR_EIG_FAILURE 16

#define MJS_ERR_GAMMA_TOO_SMALL 17

#define MJS_ERR_NOT_MSS 18

#define MJS_ERR_SINGULAR 19

#define MJS_ERR_DIVERGED 20

#define MJS_ERR_PREMISE_VIOLATION 21

#define MJS_ERR_SINGULAR_INNER 22

#define MJS_ERR_HYPOTHESIS_VIOLATION 23

#define MJS_ERR_NUMERIC_OVERFLOW 24

#define MJS_ERR_ALL_UNSTABLE 25

#define MJS_ERR_DEGENERATE 26

#define MJS_ERR_SCHEMA_MISMATCH 27

#define MJS_ERR_INVALID_ARGUMENT 28

#define MJS_ERR_IO 29

// Optimal solution of the coupled Riccati equations for one model.
typedef struct MjsLqrHandle MjsLqrHandle;

// A plant together with its cost specification.
typedef struct MjsModelHandle MjsModelHandle;

// Summary of a certainty-equivalent run. Cost fields are NaN when
// `stabilizes_true` is 0.
typedef struct MjsCeSummary {
  double j_star;
  double j_hat;
  double gap;
  double relative_gap;
  double gain_mismatch;
  double p_mismatch;
  double delta_p;
  double rho_hat;
  int32_t stabilizes_true;
} MjsCeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *mjs_last_error_message(void);

// Loads a model file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t mjs_model_load(const char *path, struct MjsModelHandle **out);

// Parses a model document held in memory.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
int32_t mjs_model_from_string(const char *text, struct MjsModelHandle **out);

// Releases a model. Null is ignored.
//
// # Safety
// `handle` must come from a model constructor and not be freed twice.
void mjs_model_free(struct MjsModelHandle *handle);

// Writes the state, input and mode dimensions.
//
// # Safety
// All pointers must be valid.
int32_t mjs_model_dims(const struct MjsModelHandle *handle, size_t *n, size_t *p, size_t *s);

// Solves the coupled Riccati equations. `tol <= 0` and `max_iter == 0`
// select the defaults.
//
// # Safety
// `model` and `out` must be valid pointers.
int32_t mjs_lqr_solve(const struct MjsModelHandle *model,
                      double tol,
                      size_t max_iter,
                      struct MjsLqrHandle **out);

// Releases a solution. Null is ignored.
//
// # Safety
// `handle` must come from `mjs_lqr_solve` and not be freed twice.
void mjs_lqr_free(struct MjsLqrHandle *handle);

// Copies `P_mode` (n×n, row-major) into `out`.
//
// # Safety
// `out` must hold at least `len` doubles.
int32_t mjs_lqr_riccati(const struct MjsLqrHandle *handle, size_t mode, double *out, size_t len);

// Copies the optimal gain `K_mode` (p×n, row-major) into `out`.
//
// # Safety
// `out` must hold at least `len` doubles.
int32_t mjs_lqr_gain(const struct MjsLqrHandle *handle, size_t mode, double *out, size_t len);

// Optimal average cost and closed-loop spectral radius.
//
// # Safety
// All pointers must be valid.
int32_t mjs_lqr_summary(const struct MjsLqrHandle *handle,
                        double *cost,
                        double *rho,
                        size_t *iterations);

// Mean-square stability of the loop closed by `gains`, given as `s`
// consecutive row-major p×n blocks (`len = s·p·n`). Writes the spectral
// radius of the augmented matrix and 1/0 for stable/unstable.
//
// # Safety
// `gains` must hold `len` doubles; `rho` and `stable` must be valid.
int32_t mjs_mss_check(const struct MjsModelHandle *model,
                      const double *gains,
                      size_t len,
                      double *rho,
                      int32_t *stable);

// Certainty-equivalent pipeline: gains from `nominal`, evaluated on
// `truth` with the truth's cost.
//
// # Safety
// All pointers must be valid.
int32_t mjs_ce_run(const struct MjsModelHandle *truth,
                   const struct MjsModelHandle *nominal,
                   double tol,
                   size_t max_iter,
                   struct MjsCeSummary *out);

// Dimensions of a solution, for sizing buffers.
//
// # Safety
// All pointers must be valid.
int32_t mjs_lqr_dims(const struct MjsLqrHandle *handle, size_t *n, size_t *p, size_t *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MJSLQR_H */
