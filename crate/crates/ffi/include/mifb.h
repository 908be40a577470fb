#ifndef MIFB_H
#define MIFB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MifbStatus {
  MIFB_STATUS_OK = 0,
  MIFB_STATUS_NULL_POINTER = 1,
  MIFB_STATUS_INVALID_ARGUMENT = 2,
  MIFB_STATUS_CONFIG = 3,
  MIFB_STATUS_DIVERGENCE = 4,
  MIFB_STATUS_MONITOR = 5,
  MIFB_STATUS_INSUFFICIENT_DATA = 6,
  MIFB_STATUS_IO = 7,
  MIFB_STATUS_INTERNAL = 8,
  MIFB_STATUS_PANIC = 9,
} MifbStatus;

typedef enum MifbCommand {
  MIFB_COMMAND_RUN = 0,
  MIFB_COMMAND_COMPARE = 1,
  MIFB_COMMAND_RATES = 2,
} MifbCommand;

// A composite problem built from an instance description.
typedef struct MifbProblem MifbProblem;

// Inertial coefficients and step size.
typedef struct MifbSchedule MifbSchedule;

// Records and final point of a finished run.
typedef struct MifbTrace MifbTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next library call on the same thread.
const char *mifb_last_error_message(void);

// Builds a problem from an instance description such as
// `{"kind": "sparse_regression", "seed": 0}`.
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
enum MifbStatus mifb_problem_from_json(const char *spec_json, struct MifbProblem **out);

// # Safety
// `problem` must be null or a handle from [`mifb_problem_from_json`] that
// has not been freed.
void mifb_problem_free(struct MifbProblem *problem);

// Ambient dimension, 0 for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
size_t mifb_problem_dimension(const struct MifbProblem *problem);

// Lipschitz constant of the gradient of the smooth part.
//
// # Safety
// `problem` must be a live handle and `out` a valid pointer.
enum MifbStatus mifb_problem_lipschitz(const struct MifbProblem *problem, double *out);

// Objective value `F(x) + R(x)` at `x` of length `n`.
//
// # Safety
// `problem` must be a live handle, `x` must hold `n` doubles and `out`
// must be valid.
enum MifbStatus mifb_problem_objective(const struct MifbProblem *problem,
                                       const double *x,
                                       size_t n,
                                       double *out);

// Schedule with memory `s`, coefficients `a`, `b` (each of length `s`) and
// a constant step `gamma` (absolute, not a fraction of 1/L).
//
// # Safety
// `a` and `b` must hold `s` doubles each and `out` must be valid.
enum MifbStatus mifb_schedule_new(const double *a,
                                  const double *b,
                                  size_t s,
                                  double gamma,
                                  struct MifbSchedule **out);

// # Safety
// `schedule` must be null or a live handle.
void mifb_schedule_free(struct MifbSchedule *schedule);

// Runs the solver from `x0` (zeros when NULL) and stores the trace in
// `out`. `tol` is the step-length stopping threshold.
//
// # Safety
// Handles must be live, `x0` must be NULL or hold `n` doubles, `out` must
// be valid.
enum MifbStatus mifb_solve(const struct MifbProblem *problem,
                           const struct MifbSchedule *schedule,
                           const double *x0,
                           size_t n,
                           size_t max_iter,
                           double tol,
                           struct MifbTrace **out);

// # Safety
// `trace` must be null or a live handle.
void mifb_trace_free(struct MifbTrace *trace);

// Number of iterations performed, 0 for a null handle.
//
// # Safety
// `trace` must be null or a live handle.
size_t mifb_trace_iterations(const struct MifbTrace *trace);

// Copies the final point into `out`, which must hold exactly `n` doubles.
//
// # Safety
// `trace` must be live and `out` must hold `n` doubles.
enum MifbStatus mifb_trace_final_point(const struct MifbTrace *trace, double *out, size_t n);

// Copies up to `n` objective values (one per record, starting at `k = 0`)
// and returns how many were written.
//
// # Safety
// `trace` must be null or live; `out` must be NULL or hold `n` doubles.
size_t mifb_trace_objective(const struct MifbTrace *trace, double *out, size_t n);

// Evaluates the feasibility margin `delta` of coefficients `a`, `b` at the
// stationary constants for a constant step `gamma` and Lipschitz constant
// `lipschitz`.
//
// # Safety
// `a` and `b` must hold `s` doubles; `delta` and `feasible` must be valid.
enum MifbStatus mifb_check_feasibility(const double *a,
                                       const double *b,
                                       size_t s,
                                       double gamma,
                                       double lipschitz,
                                       double *delta,
                                       bool *feasible);

// Hard thresholding of `z` (length `n`) with parameter `theta` into `out`.
//
// # Safety
// `z` and `out` must hold `n` doubles each.
enum MifbStatus mifb_prox_l0(const double *z, size_t n, double theta, double *out);

// Runs an experiment config and writes its files to `out_dir` (the
// config's directory when NULL). Plots are skipped when `plot` is false.
//
// # Safety
// `config_path` must be a NUL-terminated string; `out_dir` NULL or one.
enum MifbStatus mifb_run_experiment(enum MifbCommand command,
                                    const char *config_path,
                                    const char *out_dir,
                                    bool plot);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIFB_H */
