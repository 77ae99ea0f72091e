#ifndef DECLQG_H
#define DECLQG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Schedules that can be read from a synthesis handle.
typedef enum DeclqgSchedule {
  DECLQG_SCHEDULE_K = 0,
  DECLQG_SCHEDULE_L = 1,
  DECLQG_SCHEDULE_K_HAT = 2,
  DECLQG_SCHEDULE_L_HAT = 3,
  DECLQG_SCHEDULE_SIGMA = 4,
  DECLQG_SCHEDULE_SIGMA_HAT = 5,
  DECLQG_SCHEDULE_P = 6,
  DECLQG_SCHEDULE_P_HAT = 7,
} DeclqgSchedule;

typedef enum DeclqgStatus {
  DECLQG_STATUS_OK = 0,
  DECLQG_STATUS_NULL_POINTER = 1,
  DECLQG_STATUS_INVALID_UTF8 = 2,
  DECLQG_STATUS_PARSE = 3,
  DECLQG_STATUS_SCHEMA = 4,
  DECLQG_STATUS_VALIDATION = 5,
  DECLQG_STATUS_DIMENSION = 6,
  DECLQG_STATUS_SOLVER = 7,
  DECLQG_STATUS_HORIZON_EXCEEDED = 8,
  DECLQG_STATUS_STRUCTURE = 9,
  DECLQG_STATUS_IO = 10,
  DECLQG_STATUS_INVALID_ARGUMENT = 11,
  DECLQG_STATUS_BUFFER_TOO_SMALL = 12,
  DECLQG_STATUS_PANIC = 13,
} DeclqgStatus;

// A stateful controller stepping through the horizon.
typedef struct DeclqgController DeclqgController;

// A validated problem instance.
typedef struct DeclqgProblem DeclqgProblem;

// Centralized and two-player solutions of one problem.
typedef struct DeclqgSynthesis DeclqgSynthesis;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *declqg_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *declqg_version(void);

// Parses and validates a problem document.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum DeclqgStatus declqg_problem_from_json(const char *json, struct DeclqgProblem **out);

// Reads and validates a problem file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DeclqgStatus declqg_problem_load(const char *path, struct DeclqgProblem **out);

// Generates a reproducible random instance. `dims` holds
// `n1, n2, m1, m2, p1, p2`.
//
// # Safety
// `dims` must point to 6 values; `out` must be writable.
enum DeclqgStatus declqg_problem_random(uint64_t seed,
                                        const size_t *dims,
                                        size_t horizon,
                                        double coupling,
                                        struct DeclqgProblem **out);

// Writes `n1, n2, m1, m2, p1, p2` into `dims` and the horizon into
// `horizon`.
//
// # Safety
// `problem` must be a live handle; `dims` must hold 6 values.
enum DeclqgStatus declqg_problem_dims(const struct DeclqgProblem *problem,
                                      size_t *dims,
                                      size_t *horizon);

// # Safety
// `problem` must be null or a handle not yet freed.
void declqg_problem_free(struct DeclqgProblem *problem);

// Runs the full two-player synthesis.
//
// # Safety
// `problem` must be a live handle; `out` must be writable.
enum DeclqgStatus declqg_synthesize(const struct DeclqgProblem *problem,
                                    struct DeclqgSynthesis **out);

// Optimal centralized and two-player costs.
//
// # Safety
// `synthesis` must be a live handle; outputs must be writable.
enum DeclqgStatus declqg_synthesis_costs(const struct DeclqgSynthesis *synthesis,
                                         double *j0,
                                         double *j_hat0);

// Largest relative residual of the coupled recursions.
//
// # Safety
// `synthesis` must be a live handle; `out` must be writable.
enum DeclqgStatus declqg_synthesis_residual(const struct DeclqgSynthesis *synthesis, double *out);

// Copies stage `t` of a schedule into `buf` in row-major order and
// reports its shape. With `buf` null only the shape is written.
//
// # Safety
// `synthesis` must be a live handle; `buf` must hold `len` values;
// `rows` and `cols` must be writable.
enum DeclqgStatus declqg_synthesis_matrix(const struct DeclqgSynthesis *synthesis,
                                          enum DeclqgSchedule which,
                                          size_t t,
                                          double *buf,
                                          size_t len,
                                          size_t *rows,
                                          size_t *cols);

// Serializes the gains file document. Release with [`declqg_string_free`].
//
// # Safety
// `synthesis` must be a live handle; `out` must be writable.
enum DeclqgStatus declqg_synthesis_to_json(const struct DeclqgSynthesis *synthesis, char **out);

// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void declqg_string_free(char *s);

// # Safety
// `synthesis` must be null or a handle not yet freed.
void declqg_synthesis_free(struct DeclqgSynthesis *synthesis);

// Creates a controller at `t = 0`. A nonzero `centralized` selects the
// single-estimator law, otherwise the two-player law.
//
// # Safety
// `synthesis` must be a live handle; `out` must be writable.
enum DeclqgStatus declqg_controller_new(const struct DeclqgSynthesis *synthesis,
                                        int32_t centralized,
                                        struct DeclqgController **out);

// Feeds measurement `y` (length `p`), writes `u` (length `m`) and
// advances the controller by one step.
//
// # Safety
// `controller` must be a live handle; `y` must hold `y_len` values and
// `u` must hold `u_len` values.
enum DeclqgStatus declqg_controller_step(struct DeclqgController *controller,
                                         const double *y,
                                         size_t y_len,
                                         double *u,
                                         size_t u_len);

// Current timestep of the controller.
//
// # Safety
// `controller` must be a live handle.
size_t declqg_controller_time(const struct DeclqgController *controller);

// Returns the controller to `t = 0` with estimates at the initial mean.
//
// # Safety
// `controller` must be a live handle.
enum DeclqgStatus declqg_controller_reset(struct DeclqgController *controller);

// # Safety
// `controller` must be null or a handle not yet freed.
void declqg_controller_free(struct DeclqgController *controller);

// Monte Carlo estimate of the closed-loop cost over `rollouts >= 2`
// rollouts. Thread count follows `DECLQG_THREADS`.
//
// # Safety
// `synthesis` must be a live handle; outputs must be writable.
enum DeclqgStatus declqg_simulate(const struct DeclqgSynthesis *synthesis,
                                  int32_t centralized,
                                  size_t rollouts,
                                  uint64_t seed,
                                  double *mean,
                                  double *standard_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DECLQG_H */
