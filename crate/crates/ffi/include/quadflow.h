#ifndef QUADFLOW_H
#define QUADFLOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call. Values 1–5 match the command-line exit
 codes.
 */
typedef enum QfStatus {
  QF_STATUS_OK = 0,
  QF_STATUS_IO = 1,
  QF_STATUS_INVALID_ARGUMENT = 2,
  QF_STATUS_BALL_ESCAPE = 3,
  QF_STATUS_TRUNCATION = 4,
  QF_STATUS_DEGENERACY = 5,
  QF_STATUS_NULL_POINTER = 6,
  QF_STATUS_PANIC = 7,
} QfStatus;

/*
 Endpoint and step statistics of one integration.
 */
typedef struct QfArc QfArc;

/*
 A computed Lyapunov spectrum.
 */
typedef struct QfSpectrum QfSpectrum;

/*
 A quadratic system at a fixed precision.
 */
typedef struct QfSystem QfSystem;

/*
 Integer step statistics of an arc (1-based step indices).
 */
typedef struct QfArcStats {
  /*
   Number of steps N.
   */
  size_t steps;
  /*
   Largest local polynomial degree.
   */
  size_t n_max;
  /*
   First step attaining `n_max`.
   */
  size_t l_max;
  /*
   First step attaining the largest |dt|.
   */
  size_t d_max;
  /*
   Non-zero when the trajectory left the trapping ball.
   */
  int32_t escaped;
} QfArcStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *qf_version(void);

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *qf_last_error(void);

/*
 Releases a string returned by this library.

 # Safety
 `s` must be NULL or a string produced by this library, not yet freed.
 */
void qf_string_free(char *s);

/*
 Parses a system-definition JSON document at `bits` of mantissa.

 # Safety
 `json` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum QfStatus qf_system_from_json(const char *json, uint32_t bits, struct QfSystem **out);

/*
 Loads a system from a file path, or a bundled name such as
 `"dong2019.json"`.

 # Safety
 `source` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum QfStatus qf_system_load(const char *source, uint32_t bits, struct QfSystem **out);

/*
 # Safety
 `sys` must be NULL or a live handle.
 */
void qf_system_free(struct QfSystem *sys);

/*
 Dimension `n`, or 0 for NULL.

 # Safety
 `sys` must be NULL or a live handle.
 */
size_t qf_system_dim(const struct QfSystem *sys);

/*
 Mantissa width in bits, or 0 for NULL.

 # Safety
 `sys` must be NULL or a live handle.
 */
uint32_t qf_system_bits(const struct QfSystem *sys);

/*
 Integrates from `x0` (comma-separated decimals) over `[0, way*horizon]`
 with series tolerance `eps_pw`; `way` is +1 or -1. A ball escape still
 yields an arc (check `escaped` in [`qf_arc_stats`]) and returns
 [`QfStatus::BallEscape`].

 # Safety
 String arguments must be NUL-terminated; `sys` a live handle; `out`
 valid for a pointer write.
 */
enum QfStatus qf_integrate(const struct QfSystem *sys,
                           const char *x0,
                           const char *horizon,
                           const char *eps_pw,
                           int32_t way,
                           struct QfArc **out);

/*
 # Safety
 `arc` must be NULL or a live handle.
 */
void qf_arc_free(struct QfArc *arc);

/*
 Final state as comma-separated decimals.

 # Safety
 `arc` must be a live handle; `out` valid for a pointer write.
 */
enum QfStatus qf_arc_final_state(const struct QfArc *arc, char **out);

/*
 Signed time reached (equal to `way*horizon` unless the ball was left).

 # Safety
 `arc` must be a live handle; `out` valid for a pointer write.
 */
enum QfStatus qf_arc_final_time(const struct QfArc *arc, char **out);

/*
 # Safety
 `arc` must be a live handle; `out` valid for a struct write.
 */
enum QfStatus qf_arc_stats(const struct QfArc *arc, struct QfArcStats *out);

/*
 Lyapunov spectrum from `x0` over `horizon` in `macro_steps` steps.

 # Safety
 String arguments must be NUL-terminated; `sys` a live handle; `out`
 valid for a pointer write.
 */
enum QfStatus qf_lyapunov(const struct QfSystem *sys,
                          const char *x0,
                          const char *horizon,
                          size_t macro_steps,
                          uint64_t seed,
                          const char *eps_pw,
                          struct QfSpectrum **out);

/*
 # Safety
 `spec` must be NULL or a live handle.
 */
void qf_spectrum_free(struct QfSpectrum *spec);

/*
 Exponents in production order, comma-separated; `sorted != 0` gives
 them in decreasing order instead.

 # Safety
 `spec` must be a live handle; `out` valid for a pointer write.
 */
enum QfStatus qf_spectrum_exponents(const struct QfSpectrum *spec, int32_t sorted, char **out);

/*
 Sum of the exponents.

 # Safety
 `spec` must be a live handle; `out` valid for a pointer write.
 */
enum QfStatus qf_spectrum_sum(const struct QfSpectrum *spec, char **out);

/*
 Recurrence scan from `x0` on the grid `k*dt_p`, `t <= t_p`. Writes the
 event count to `count` and, if `period` is not NULL, the period estimate
 (an empty string when the returns are irregular or too few).

 # Safety
 String arguments must be NUL-terminated; `sys` a live handle; `count`
 valid for a write; `period` NULL or valid for a pointer write.
 */
enum QfStatus qf_recurrences(const struct QfSystem *sys,
                             const char *x0,
                             const char *dt_p,
                             const char *t_p,
                             const char *threshold,
                             const char *eps_pw,
                             size_t *count,
                             char **period);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADFLOW_H */
