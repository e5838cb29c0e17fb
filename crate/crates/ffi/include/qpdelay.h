#ifndef QPDELAY_H
#define QPDELAY_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Terminal state of a solve, mirrored from the library.
 */
typedef enum QpRunStatus {
  QP_RUN_STATUS_CONVERGED = 0,
  QP_RUN_STATUS_TRUNCATION_FLOOR = 1,
  QP_RUN_STATUS_MAX_STAGES = 2,
  QP_RUN_STATUS_EXCISED = 3,
  QP_RUN_STATUS_DIVERGED = 4,
  QP_RUN_STATUS_FAILED = 5,
} QpRunStatus;

/**
 * Result of every call.
 */
typedef enum QpStatus {
  QP_STATUS_OK = 0,
  /**
   * A required pointer was null or a length was wrong.
   */
  QP_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The configuration failed to parse or validate.
   */
  QP_STATUS_CONFIG = 2,
  /**
   * The frequency was excised.
   */
  QP_STATUS_EXCISED = 3,
  /**
   * The iteration diverged, stalled or a certificate failed.
   */
  QP_STATUS_SOLVER = 4,
  /**
   * A panic was caught at the boundary.
   */
  QP_STATUS_INTERNAL = 5,
} QpStatus;

/**
 * A parsed and diagonalized problem.
 */
typedef struct QpProblem QpProblem;

/**
 * The outcome of one solve: the report and, on success, the lattice vector.
 */
typedef struct QpSolution QpSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a TOML configuration and diagonalizes the problem.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QpStatus qp_problem_from_toml(const char *toml, struct QpProblem **out);

/**
 * # Safety
 * `problem` must come from [`qp_problem_from_toml`] or be null.
 */
void qp_problem_free(struct QpProblem *problem);

/**
 * Number of frequencies `d`.
 *
 * # Safety
 * `problem` must be a live handle.
 */
size_t qp_problem_dim(const struct QpProblem *problem);

/**
 * Solves at `omega` (length `d`), or at the configured frequency when
 * `omega` is null. A solution handle is returned whenever the run
 * produced a report, including excised and diverged runs, so that the
 * report can be inspected; the status reflects the outcome.
 *
 * # Safety
 * `problem` must be a live handle, `omega` null or readable for `len`
 * doubles, and `out` a valid pointer.
 */
enum QpStatus qp_solve(const struct QpProblem *problem,
                       const double *omega,
                       size_t len,
                       struct QpSolution **out);

/**
 * # Safety
 * `solution` must come from [`qp_solve`] or be null.
 */
void qp_solution_free(struct QpSolution *solution);

/**
 * Writes the terminal run status.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum QpStatus qp_solution_status(const struct QpSolution *solution, enum QpRunStatus *out);

/**
 * Writes the final lattice residual and the number of Newton stages taken.
 *
 * # Safety
 * `solution` must be a live handle; the outputs may be null.
 */
enum QpStatus qp_solution_summary(const struct QpSolution *solution,
                                  double *final_residual,
                                  size_t *stages);

/**
 * Evaluates the real solution `x(t)` into `out`, which holds `len = 2n`
 * doubles.
 *
 * # Safety
 * `solution` must be a live handle and `out` writable for `len` doubles.
 */
enum QpStatus qp_solution_eval(const struct QpProblem *problem,
                               const struct QpSolution *solution,
                               double t,
                               double *out,
                               size_t len);

/**
 * Copies the last error message of the calling thread into `buf`,
 * truncated and NUL-terminated. Returns the full message length in bytes,
 * or 0 when there is none.
 *
 * # Safety
 * `buf` must be null or writable for `cap` bytes.
 */
size_t qp_last_error(char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QPDELAY_H */
