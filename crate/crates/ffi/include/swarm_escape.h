#ifndef SWARM_ESCAPE_H
#define SWARM_ESCAPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum SeStatus {
  SE_STATUS_OK = 0,
  /*
   Invalid configuration, argument or dimension.
   */
  SE_STATUS_CONFIG = 1,
  /*
   A safety contract could not be met.
   */
  SE_STATUS_SAFETY = 2,
  SE_STATUS_NUMERICAL = 3,
  SE_STATUS_NULL_POINTER = 4,
  SE_STATUS_IO = 5,
  SE_STATUS_PANIC = 6,
} SeStatus;

/*
 CUSUM spoofing detector.
 */
typedef struct SeDetector SeDetector;

/*
 Scenario configuration.
 */
typedef struct SeScenario SeScenario;

/*
 Finished simulation run.
 */
typedef struct SeTrace SeTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread. Empty after a success.
 The pointer stays valid until the next call into this library on the
 same thread.
 */
const char *se_last_error(void);

/*
 Loads a TOML scenario file.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SeStatus se_scenario_load(const char *path, struct SeScenario **out);

/*
 Parses a scenario from TOML text.

 # Safety
 `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SeStatus se_scenario_from_toml(const char *text, struct SeScenario **out);

/*
 Overrides the seed of a loaded scenario.

 # Safety
 `scenario` must come from this library and not be freed.
 */
enum SeStatus se_scenario_set_seed(struct SeScenario *scenario, uint64_t seed);

/*
 # Safety
 `scenario` must be null or come from this library, and is invalid afterwards.
 */
void se_scenario_free(struct SeScenario *scenario);

/*
 Runs the simulation.

 # Safety
 `scenario` must come from this library; `out` must be writable.
 */
enum SeStatus se_run(const struct SeScenario *scenario, struct SeTrace **out);

/*
 # Safety
 `trace` must be null or come from [`se_run`], and is invalid afterwards.
 */
void se_trace_free(struct SeTrace *trace);

/*
 Number of simulated ticks and whether every agent arrived.

 # Safety
 `trace` must come from [`se_run`]; the out pointers must be writable.
 */
enum SeStatus se_trace_outcome(const struct SeTrace *trace, uint64_t *ticks, bool *completed);

/*
 Writes the per-tick CSV.

 # Safety
 `trace` must come from [`se_run`]; `path` must be a NUL-terminated string.
 */
enum SeStatus se_trace_write_csv(const struct SeTrace *trace, const char *path);

/*
 Run summary as JSON. Release the string with [`se_string_free`].

 # Safety
 `trace` must come from [`se_run`]; `out` must be writable.
 */
enum SeStatus se_trace_summary_json(const struct SeTrace *trace, char **out);

/*
 # Safety
 `s` must be null or a string returned by this library.
 */
void se_string_free(char *s);

/*
 Upper-tail χ² quantile with `df` degrees of freedom.

 # Safety
 `out` must be writable.
 */
enum SeStatus se_chi2_quantile(double alpha, size_t df, double *out);

/*
 Escape time of the reference double integrator (dt = 0.1) without GPS.
 `p_at_attack` is the 4x4 covariance at detection, row-major; `zeta`
 covers the leading `zeta_len` states.

 # Safety
 `zeta` must hold `zeta_len` values, `p_at_attack` 16 values, and `out`
 must be writable.
 */
enum SeStatus se_escape_time(const double *zeta,
                             size_t zeta_len,
                             double alpha,
                             const double *p_at_attack,
                             size_t *out);

/*
 Creates a CUSUM detector with threshold `χ²_df(α) / (1 − δ)`.

 # Safety
 `out` must be writable.
 */
enum SeStatus se_detector_new(double alpha, double delta, size_t df, struct SeDetector **out);

/*
 Feeds one attack-vector estimate `d_hat` (length df) with its covariance
 `p_d` (df x df, row-major). Writes the updated statistic and decision.

 # Safety
 `detector` must come from [`se_detector_new`]; the arrays must hold df
 and df² values; the out pointers must be writable.
 */
enum SeStatus se_detector_step(struct SeDetector *detector,
                               const double *d_hat,
                               const double *p_d,
                               double *statistic,
                               bool *attacked);

/*
 # Safety
 `detector` must be null or come from [`se_detector_new`], and is invalid
 afterwards.
 */
void se_detector_free(struct SeDetector *detector);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWARM_ESCAPE_H */
