#ifndef TEMPORAL_BELL_H
#define TEMPORAL_BELL_H

/* Generated from the Rust sources by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every ABI call.
 */
typedef enum TbStatus {
  /**
   * The call succeeded.
   */
  TB_STATUS_OK = 0,
  /**
   * The inputs were invalid (malformed JSON, bad directions, bad spec).
   */
  TB_STATUS_CONFIGURATION_ERROR = 1,
  /**
   * The operation itself failed (I/O, serialization, internal panic).
   */
  TB_STATUS_RUNTIME_ERROR = 2,
  /**
   * A required pointer argument was null.
   */
  TB_STATUS_NULL_ARGUMENT = 3,
  /**
   * A string argument was not valid UTF-8.
   */
  TB_STATUS_INVALID_STRING = 4,
} TbStatus;

/**
 * Measurement setting selector.
 */
typedef enum TbSetting {
  TB_SETTING_A = 0,
  TB_SETTING_B = 1,
  TB_SETTING_C = 2,
} TbSetting;

/**
 * Measurement outcome selector.
 */
typedef enum TbOutcome {
  TB_OUTCOME_PLUS = 1,
  TB_OUTCOME_MINUS = -1,
} TbOutcome;

/**
 * Opaque parsed experiment spec; create with [`tb_spec_parse`], release
 * with [`tb_spec_free`].
 */
typedef struct TbSpec TbSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never freed.
 */
const char *tb_version(void);

/**
 * Message describing this thread's most recent failure, empty if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tb_last_error_message(void);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `string` must be null or a pointer obtained from this library and not
 * yet freed.
 */
void tb_string_free(char *string);

/**
 * Parses and validates an experiment spec from JSON; on success stores an
 * owned handle in `out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum TbStatus tb_spec_parse(const char *json, struct TbSpec **out);

/**
 * Releases a spec handle. Null is a no-op.
 *
 * # Safety
 * `spec` must be null or a handle from [`tb_spec_parse`] not yet freed.
 */
void tb_spec_free(struct TbSpec *spec);

/**
 * Runs the experiment described by `spec` and stores the report as a JSON
 * string in `report_json_out` (free with [`tb_string_free`]). A null
 * `seed` falls back to the spec's seed, the TBS_SEED environment
 * variable, then 0.
 *
 * # Safety
 * `spec` must be a live handle from [`tb_spec_parse`]; `seed` must be
 * null or readable; `report_json_out` must be writable.
 */
enum TbStatus tb_experiment_run(const struct TbSpec *spec,
                                const uint64_t *seed,
                                char **report_json_out);

/**
 * Closed form of the three-term expectation combination for the
 * configuration given as three 3-vectors (normalized internally).
 *
 * # Safety
 * `a`, `b`, `c` must each point to three readable doubles; `out` must be
 * writable.
 */
enum TbStatus tb_quantum_lhs_16(const double *a, const double *b, const double *c, double *out);

/**
 * Closed form of the four-term combination; same contract as
 * [`tb_quantum_lhs_16`].
 *
 * # Safety
 * `a`, `b`, `c` must each point to three readable doubles; `out` must be
 * writable.
 */
enum TbStatus tb_quantum_lhs_18(const double *a, const double *b, const double *c, double *out);

/**
 * Exact probability that a run prepared with Bloch vector `bloch`
 * (norm at most 1) yields `first_outcome` then `second_outcome` when the
 * ordered settings are `first_setting`, `second_setting`.
 * `depolarization` shrinks the Bloch vector between the measurements;
 * pass 1 for the noiseless case.
 *
 * # Safety
 * `bloch`, `a`, `b`, `c` must each point to three readable doubles;
 * `out` must be writable.
 */
enum TbStatus tb_exact_pair_prob(const double *bloch,
                                 const double *a,
                                 const double *b,
                                 const double *c,
                                 double depolarization,
                                 enum TbSetting first_setting,
                                 enum TbOutcome first_outcome,
                                 enum TbSetting second_setting,
                                 enum TbOutcome second_outcome,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEMPORAL_BELL_H */
