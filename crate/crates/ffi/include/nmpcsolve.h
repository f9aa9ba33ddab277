#ifndef NMPCSOLVE_H
#define NMPCSOLVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define NMPC_OK 0

#define NMPC_BAD_ARGUMENT 1

#define NMPC_CONFIG_ERROR 2

#define NMPC_NUMERICAL_ERROR 3

// Opaque solver handle.
typedef struct NmpcSolver NmpcSolver;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call; never free it.
const char *nmpc_last_error(void);

// Create a solver from a JSON run configuration (`"{}"` for all defaults).
// Returns null on failure; see `nmpc_last_error`.
//
// # Safety
// `config_json` must be a valid NUL-terminated UTF-8 string or null.
NmpcSolver *nmpc_solver_new(const char *config_json);

// State dimension of the model (6 for the crane), or -1 on a null handle.
int nmpc_solver_state_dim(const NmpcSolver *solver);

// Input dimension of the model (2 for the crane), or -1 on a null handle.
int nmpc_solver_input_dim(const NmpcSolver *solver);

// Solve one MPC sample: set the measured state, run the fixed-iteration IPM
// (warm-started from the previous call), and write the first optimized input
// to `u_out`. `x_hat` must hold `state_dim` values, `u_out` space for
// `input_dim`. On failure the warm start is discarded and `u_out` is left
// untouched.
//
// # Safety
// `x_hat` and `u_out` must point to arrays of at least `x_len` / `u_len`
// doubles, or be null (rejected with `NMPC_BAD_ARGUMENT`).
int nmpc_solver_step(NmpcSolver *solver,
                     const double *x_hat,
                     size_t x_len,
                     double *u_out,
                     size_t u_len);

// Discard the warm start so the next step solves cold.
//
// # Safety
// `solver` must be a handle from `nmpc_solver_new` or null.
void nmpc_solver_reset(NmpcSolver *solver);

// Destroy a handle. Null is ignored.
//
// # Safety
// `solver` must be a handle from `nmpc_solver_new` (freed at most once) or null.
void nmpc_solver_free(NmpcSolver *solver);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMPCSOLVE_H */
