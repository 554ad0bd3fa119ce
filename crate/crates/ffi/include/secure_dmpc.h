#ifndef SECURE_DMPC_H
#define SECURE_DMPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SDMPC_STATUS_OK = 0,
  SDMPC_STATUS_NULL_POINTER = 1,
  SDMPC_STATUS_INVALID_ARGUMENT = 2,
  SDMPC_STATUS_CONFIG = 3,
  SDMPC_STATUS_IO = 4,
  SDMPC_STATUS_NUMERICAL = 5,
  SDMPC_STATUS_DIVERGED = 6,
  SDMPC_STATUS_MITIGATION_UNAVAILABLE = 7,
  SDMPC_STATUS_OUT_OF_RANGE = 8,
  SDMPC_STATUS_PANIC = 9,
} SdmpcStatus;

typedef enum {
  SDMPC_MODE_NOMINAL = 0,
  SDMPC_MODE_ATTACKED = 1,
  SDMPC_MODE_SECURED = 2,
} SdmpcMode;

/**
 * One local quadratic program.
 */
typedef struct SdmpcQp SdmpcQp;

/**
 * A loaded scenario.
 */
typedef struct SdmpcScenario SdmpcScenario;

/**
 * The result of running a scenario.
 */
typedef struct SdmpcTrace SdmpcTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the buffer size needed for the whole
 * message, or 0 if there is no message.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sdmpc_last_error_message(char *buf, size_t len);

/**
 * Load and validate a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
SdmpcStatus sdmpc_scenario_load(const char *path, SdmpcScenario **out);

/**
 * # Safety
 * `scenario` must be null or come from [`sdmpc_scenario_load`].
 */
void sdmpc_scenario_free(SdmpcScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
SdmpcStatus sdmpc_scenario_set_mode(SdmpcScenario *scenario, SdmpcMode mode);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
SdmpcStatus sdmpc_scenario_set_seed(SdmpcScenario *scenario, uint64_t seed);

/**
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
SdmpcStatus sdmpc_scenario_agent_count(const SdmpcScenario *scenario, size_t *out);

/**
 * Run the closed loop.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
SdmpcStatus sdmpc_scenario_run(const SdmpcScenario *scenario, SdmpcTrace **out);

/**
 * Run the attack-gain sweep and write `sweep.csv` into `dir`.
 *
 * # Safety
 * `scenario` must be a live handle; `dir` a NUL-terminated string.
 */
SdmpcStatus sdmpc_scenario_sweep(const SdmpcScenario *scenario,
                                 double tau_min,
                                 double tau_max,
                                 size_t tau_steps,
                                 const char *dir);

/**
 * # Safety
 * `trace` must be null or come from [`sdmpc_scenario_run`].
 */
void sdmpc_trace_free(SdmpcTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle and `out` writable.
 */
SdmpcStatus sdmpc_trace_step_count(const SdmpcTrace *trace, size_t *out);

/**
 * Whether any step's negotiation diverged.
 *
 * # Safety
 * `trace` must be a live handle and `out` writable.
 */
SdmpcStatus sdmpc_trace_diverged(const SdmpcTrace *trace, bool *out);

/**
 * Applied input, air and wall temperature after the step, and the number
 * of negotiation iterations of step `k`.
 *
 * # Safety
 * `trace` must be a live handle; output pointers must be writable or null
 * (null outputs are skipped).
 */
SdmpcStatus sdmpc_trace_sample(const SdmpcTrace *trace,
                               size_t k,
                               size_t agent,
                               double *u,
                               double *x_air,
                               double *x_wall,
                               size_t *iterations);

/**
 * Deviation `E` and flag of agent `agent` at step `k`; secured runs only.
 *
 * # Safety
 * `trace` must be a live handle and the outputs writable.
 */
SdmpcStatus sdmpc_trace_detection(const SdmpcTrace *trace,
                                  size_t k,
                                  size_t agent,
                                  double *deviation,
                                  bool *flagged);

/**
 * Accumulated cost of every agent into `per_agent[0..len]` and the sum
 * into `global`.
 *
 * # Safety
 * `trace` must be a live handle, `per_agent` must hold `len` values.
 */
SdmpcStatus sdmpc_trace_costs(const SdmpcTrace *trace,
                              double *per_agent,
                              size_t len,
                              double *global);

/**
 * Write `trace.csv`, `costs.csv` and `summary.txt` into `dir`.
 *
 * # Safety
 * `trace` must be a live handle; `dir` a NUL-terminated string.
 */
SdmpcStatus sdmpc_trace_write(const SdmpcTrace *trace, const char *dir);

/**
 * Local problem `min ½UᵀHU + fᵀU  s.t.  ΘU = θ` with `H` n×n and `Θ` c×n.
 *
 * # Safety
 * `h` must hold n·n values, `f` n values, `theta` c·n values; `out` writable.
 */
SdmpcStatus sdmpc_qp_new(size_t n,
                         size_t c,
                         const double *h,
                         const double *f,
                         const double *theta,
                         SdmpcQp **out);

/**
 * # Safety
 * `qp` must be null or come from [`sdmpc_qp_new`].
 */
void sdmpc_qp_free(SdmpcQp *qp);

/**
 * Solve for one allocation. `u` receives n values, `lambda` c values;
 * any output may be null.
 *
 * # Safety
 * `qp` must be a live handle; `allocation` must hold c values.
 */
SdmpcStatus sdmpc_qp_solve(const SdmpcQp *qp,
                           const double *allocation,
                           double *u,
                           double *lambda,
                           double *cost);

/**
 * Sensitivity pair: `p` receives c·c values row-major, `s` c values.
 *
 * # Safety
 * `qp` must be a live handle; outputs must be writable.
 */
SdmpcStatus sdmpc_qp_sensitivity(const SdmpcQp *qp, double *p, double *s);

/**
 * Spectral radius of the negotiation map for `m` effective c×c slopes
 * stored one after another, each row-major.
 *
 * # Safety
 * `ps` must hold m·c·c values; `out` must be writable.
 */
SdmpcStatus sdmpc_spectral_radius(size_t m, size_t c, const double *ps, double rho, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SECURE_DMPC_H */
