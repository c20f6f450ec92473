#ifndef TWINCTL_H
#define TWINCTL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TwinctlStatus {
  TWINCTL_STATUS_OK = 0,
  TWINCTL_STATUS_NULL_POINTER = 1,
  TWINCTL_STATUS_INVALID_STRING = 2,
  TWINCTL_STATUS_CONFIG = 3,
  TWINCTL_STATUS_DIMENSION = 4,
  TWINCTL_STATUS_NON_FINITE = 5,
  TWINCTL_STATUS_RUNTIME = 6,
  TWINCTL_STATUS_IO = 7,
  TWINCTL_STATUS_PANIC = 8,
} TwinctlStatus;

/**
 * Kind of data passed to [`twinctl_twin_step`].
 */
typedef enum TwinctlData {
  /**
   * No data this step; `data` may be null.
   */
  TWINCTL_DATA_NONE = 0,
  /**
   * Continuous-time increment `dY` over the step.
   */
  TWINCTL_DATA_INCREMENT = 1,
  /**
   * Discrete observation `Y` at the current time.
   */
  TWINCTL_DATA_DISCRETE = 2,
} TwinctlData;

/**
 * A physical twin coupled to its digital twin, with its run record.
 */
typedef struct TwinctlSimulation TwinctlSimulation;

/**
 * A digital twin fed with externally supplied observations.
 */
typedef struct TwinctlTwin TwinctlTwin;

typedef struct TwinctlDims {
  size_t state_dim;
  size_t obs_dim;
  size_t control_dim;
  size_t ensemble_size;
} TwinctlDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *twinctl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *twinctl_version(void);

/**
 * Creates a simulation of a built-in preset (`lorenz63` or `pendulum`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_simulation_new(const char *preset,
                                          uint64_t seed,
                                          struct TwinctlSimulation **out);

/**
 * Creates a simulation from `key = value` config text.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_simulation_from_config(const char *config,
                                                  struct TwinctlSimulation **out);

/**
 * # Safety
 * `sim` must come from a `twinctl_simulation_*` constructor and not be used afterwards. Null is ignored.
 */
void twinctl_simulation_free(struct TwinctlSimulation *sim);

/**
 * Advances by `steps` steps, stopping early at the configured horizon.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum TwinctlStatus twinctl_simulation_advance(struct TwinctlSimulation *sim, size_t steps);

/**
 * Runs to the configured horizon.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum TwinctlStatus twinctl_simulation_run(struct TwinctlSimulation *sim);

/**
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_simulation_dims(struct TwinctlSimulation *sim, struct TwinctlDims *out);

/**
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_simulation_steps(struct TwinctlSimulation *sim, size_t *out);

/**
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_simulation_time(struct TwinctlSimulation *sim, double *out);

/**
 * Physical-twin state; `len` must equal the state dimension.
 *
 * # Safety
 * `sim` must be a live handle and `out` must hold `len` doubles.
 */
enum TwinctlStatus twinctl_simulation_true_state(struct TwinctlSimulation *sim,
                                                 double *out,
                                                 size_t len);

/**
 * Ensemble mean of the digital twin; `len` must equal the state dimension.
 *
 * # Safety
 * `sim` must be a live handle and `out` must hold `len` doubles.
 */
enum TwinctlStatus twinctl_simulation_mean_state(struct TwinctlSimulation *sim,
                                                 double *out,
                                                 size_t len);

/**
 * Control applied over the next step; `len` must equal the control dimension.
 *
 * # Safety
 * `sim` must be a live handle and `out` must hold `len` doubles.
 */
enum TwinctlStatus twinctl_simulation_control(struct TwinctlSimulation *sim,
                                              double *out,
                                              size_t len);

/**
 * Discounted cost accumulated so far.
 *
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_simulation_discounted_cost(struct TwinctlSimulation *sim, double *out);

/**
 * Writes the run record as CSV to `path`.
 *
 * # Safety
 * `sim` must be a live handle and `path` a NUL-terminated string.
 */
enum TwinctlStatus twinctl_simulation_write_csv(struct TwinctlSimulation *sim, const char *path);

/**
 * Creates a digital twin for a built-in preset. The particle draw matches a
 * simulation created with the same preset and seed.
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_twin_new(const char *preset, uint64_t seed, struct TwinctlTwin **out);

/**
 * Creates a digital twin from `key = value` config text.
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_twin_from_config(const char *config, struct TwinctlTwin **out);

/**
 * # Safety
 * `twin` must come from a `twinctl_twin_*` constructor and not be used afterwards. Null is ignored.
 */
void twinctl_twin_free(struct TwinctlTwin *twin);

/**
 * # Safety
 * `twin` must be a live handle and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_twin_dims(struct TwinctlTwin *twin, struct TwinctlDims *out);

/**
 * Advances the twin one step with the given data and writes the control it
 * used over that step. `data_len` must equal the observation dimension unless
 * `kind` is `None`; `control_len` must equal the control dimension.
 *
 * # Safety
 * `twin` must be a live handle, `data` must hold `data_len` doubles and
 * `control_out` must hold `control_len` doubles.
 */
enum TwinctlStatus twinctl_twin_step(struct TwinctlTwin *twin,
                                     enum TwinctlData kind,
                                     const double *data,
                                     size_t data_len,
                                     double *control_out,
                                     size_t control_len);

/**
 * Control implied by the current ensemble.
 *
 * # Safety
 * `twin` must be a live handle and `out` must hold `len` doubles.
 */
enum TwinctlStatus twinctl_twin_control(struct TwinctlTwin *twin, double *out, size_t len);

/**
 * # Safety
 * `twin` must be a live handle and `out` must hold `len` doubles.
 */
enum TwinctlStatus twinctl_twin_mean_state(struct TwinctlTwin *twin, double *out, size_t len);

/**
 * # Safety
 * `twin` must be a live handle and `out` a valid pointer.
 */
enum TwinctlStatus twinctl_twin_time(struct TwinctlTwin *twin, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TWINCTL_H */
