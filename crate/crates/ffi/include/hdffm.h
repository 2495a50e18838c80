#ifndef HDFFM_H
#define HDFFM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HdffmStatus {
  HDFFM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HDFFM_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument or malformed input.
   */
  HDFFM_STATUS_INVALID = 2,
  /**
   * Numerical failure such as rank deficiency.
   */
  HDFFM_STATUS_NUMERICAL = 3,
  HDFFM_STATUS_IO = 4,
  /**
   * Caller buffer too small.
   */
  HDFFM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Unexpected internal failure.
   */
  HDFFM_STATUS_INTERNAL = 6,
} HdffmStatus;

typedef enum HdffmPenalty {
  HDFFM_PENALTY_IC1A = 0,
  HDFFM_PENALTY_IC2A = 1,
} HdffmPenalty;

/**
 * Opaque factor-fit handle.
 */
typedef struct HdffmFit HdffmFit;

/**
 * Opaque panel handle.
 */
typedef struct HdffmPanel HdffmPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *hdffm_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *hdffm_version(void);

/**
 * Builds an all-scalar panel from a row-major `n × t` array.
 *
 * # Safety
 * `values` must point to `n * t` readable doubles; `out` must be writable.
 */
enum HdffmStatus hdffm_panel_from_scalar(const double *values,
                                         size_t n,
                                         size_t t,
                                         struct HdffmPanel **out);

/**
 * Parses a panel from its JSON representation.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum HdffmStatus hdffm_panel_from_json(const char *json, struct HdffmPanel **out);

/**
 * Reads a panel file (JSON, or scalar CSV when the name ends in `.csv`).
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum HdffmStatus hdffm_panel_read(const char *path, struct HdffmPanel **out);

/**
 * Serializes a panel to JSON. Release the string with [`hdffm_string_free`].
 *
 * # Safety
 * `panel` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_panel_to_json(const struct HdffmPanel *panel, char **out);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void hdffm_string_free(char *s);

/**
 * # Safety
 * `panel` must come from this library, or be null.
 */
void hdffm_panel_free(struct HdffmPanel *panel);

/**
 * Number of series `N` (0 for a null handle).
 *
 * # Safety
 * `panel` must be a live handle or null.
 */
size_t hdffm_panel_n(const struct HdffmPanel *panel);

/**
 * Number of time points `T` (0 for a null handle).
 *
 * # Safety
 * `panel` must be a live handle or null.
 */
size_t hdffm_panel_t(const struct HdffmPanel *panel);

/**
 * `⟨x_s, x_t⟩` summed over series, 0-based time indices.
 *
 * # Safety
 * `panel` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_panel_inner_product(const struct HdffmPanel *panel,
                                           size_t s,
                                           size_t t,
                                           double *out);

/**
 * Draws a simulated panel with default design settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum HdffmStatus hdffm_simulate(uint8_t dgp,
                                size_t n,
                                size_t t,
                                uint64_t seed,
                                struct HdffmPanel **out);

/**
 * Fits `k` factors.
 *
 * # Safety
 * `panel` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_fit_factors(const struct HdffmPanel *panel, size_t k, struct HdffmFit **out);

/**
 * # Safety
 * `fit` must come from this library, or be null.
 */
void hdffm_fit_free(struct HdffmFit *fit);

/**
 * Number of fitted factors (0 for a null handle).
 *
 * # Safety
 * `fit` must be a live handle or null.
 */
size_t hdffm_fit_k(const struct HdffmFit *fit);

/**
 * Copies the `k` values `λ̂` into `buf`.
 *
 * # Safety
 * `fit` must be a live handle; `buf` must hold `len` doubles.
 */
enum HdffmStatus hdffm_fit_lambda_hat(const struct HdffmFit *fit, double *buf, size_t len);

/**
 * Copies the `k × T` factor matrix (row-major) into `buf`.
 *
 * # Safety
 * `fit` must be a live handle; `buf` must hold `len` doubles.
 */
enum HdffmStatus hdffm_fit_factor_matrix(const struct HdffmFit *fit, double *buf, size_t len);

/**
 * Estimated common component as a new panel.
 *
 * # Safety
 * `fit` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_fit_common_component(const struct HdffmFit *fit, struct HdffmPanel **out);

/**
 * `V(k)`.
 *
 * # Safety
 * `panel` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_goodness_of_fit(const struct HdffmPanel *panel, size_t k, double *out);

/**
 * Number of factors minimizing the criterion for a fixed tuning constant `c`.
 *
 * # Safety
 * `panel` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_select_r_fixed(const struct HdffmPanel *panel,
                                      double c,
                                      enum HdffmPenalty penalty,
                                      size_t k_max,
                                      size_t *out);

/**
 * Number of factors with the tuning constant chosen by the permutation
 * procedure in its reference configuration.
 *
 * # Safety
 * `panel` must be a live handle; `out` must be writable.
 */
enum HdffmStatus hdffm_abc_select_r(const struct HdffmPanel *panel,
                                    enum HdffmPenalty penalty,
                                    size_t k_max,
                                    uint64_t seed,
                                    size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDFFM_H */
