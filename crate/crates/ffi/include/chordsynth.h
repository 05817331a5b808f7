#ifndef CHORDSYNTH_H
#define CHORDSYNTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_UTF8 = 2,
  CS_STATUS_VALIDATION = 3,
  CS_STATUS_DIMENSION = 4,
  CS_STATUS_DOMAIN = 5,
  CS_STATUS_NUMERICAL = 6,
  CS_STATUS_IO = 7,
  CS_STATUS_OUT_OF_RANGE = 8,
  /**
   * The requested quantity is absent, e.g. the H2 norm of a failed synthesis.
   */
  CS_STATUS_NO_VALUE = 9,
  CS_STATUS_BUFFER_TOO_SMALL = 10,
  CS_STATUS_PANIC = 11,
} CsStatus;

typedef enum CsMethod {
  CS_METHOD_CENTRALIZED = 0,
  CS_METHOD_ADMM = 1,
  CS_METHOD_DISTRIBUTED = 2,
  CS_METHOD_LOCALIZED_LQR = 3,
  CS_METHOD_TRUNCATED_LQR = 4,
  CS_METHOD_FULLY_ACTUATED = 5,
} CsMethod;

typedef enum CsSynthesisStatus {
  CS_SYNTHESIS_STATUS_SUCCESS = 0,
  CS_SYNTHESIS_STATUS_INFEASIBLE = 1,
  CS_SYNTHESIS_STATUS_NUMERICAL_LIMIT = 2,
  CS_SYNTHESIS_STATUS_DESTABILIZING = 3,
} CsSynthesisStatus;

/**
 * Opaque synthesis outcome.
 */
typedef struct CsResult CsResult;

/**
 * Opaque interconnected system.
 */
typedef struct CsSystem CsSystem;

typedef struct CsAdmmOptions {
  double rho;
  double tol;
  size_t max_iter;
  bool parallel;
} CsAdmmOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL, or 0
 * when no error has been recorded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t cs_last_error_message(char *buf, size_t len);

struct CsAdmmOptions cs_admm_options_default(void);

/**
 * Parses a system from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_system_from_json(const char *json, struct CsSystem **out);

/**
 * Loads a system from a JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CsStatus cs_system_load(const char *path, struct CsSystem **out);

/**
 * # Safety
 * `sys` must be null or a handle from this library, not yet freed.
 */
void cs_system_free(struct CsSystem *sys);

/**
 * Number of subsystems.
 *
 * # Safety
 * `sys` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_system_subsystem_count(const struct CsSystem *sys, size_t *out);

/**
 * Writes 1 to `out` when the system is certified strongly decentralized
 * stabilizable, 0 otherwise.
 *
 * # Safety
 * `sys` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_classify_sigma2(const struct CsSystem *sys, bool *out);

/**
 * Runs one synthesis method. `opts` may be null for the defaults; it is
 * ignored by the non-iterative methods. A returned result can still carry a
 * non-success [`CsSynthesisStatus`].
 *
 * # Safety
 * `sys` must be a live handle, `opts` null or valid, `out` writable.
 */
enum CsStatus cs_synthesize(const struct CsSystem *sys,
                            enum CsMethod method,
                            const struct CsAdmmOptions *opts,
                            struct CsResult **out);

/**
 * # Safety
 * `res` must be null or a handle from this library, not yet freed.
 */
void cs_result_free(struct CsResult *res);

/**
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_result_status(const struct CsResult *res, enum CsSynthesisStatus *out);

/**
 * Closed-loop H2 norm; [`CsStatus::NoValue`] when none was computed.
 *
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_result_h2(const struct CsResult *res, double *out);

/**
 * ADMM iteration count; [`CsStatus::NoValue`] for non-iterative methods.
 *
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_result_iterations(const struct CsResult *res, size_t *out);

/**
 * Privacy audit outcome of a distributed run; [`CsStatus::NoValue`] otherwise.
 *
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_result_audit_pass(const struct CsResult *res, bool *out);

/**
 * Shape of the 0-based gain block `K_ii`.
 *
 * # Safety
 * `res` must be a live handle; `rows` and `cols` must be writable.
 */
enum CsStatus cs_result_gain_shape(const struct CsResult *res,
                                   size_t i,
                                   size_t *rows,
                                   size_t *cols);

/**
 * Copies gain block `i` row-major into `buf` of `len` doubles.
 *
 * # Safety
 * `res` must be a live handle; `buf` must be valid for `len` doubles.
 */
enum CsStatus cs_result_gain(const struct CsResult *res, size_t i, double *buf, size_t len);

/**
 * Result as JSON text, released with [`cs_string_free`].
 *
 * # Safety
 * `res` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_result_to_json(const struct CsResult *res, char **out);

/**
 * Checks a gain file (`{"gains": [...]}`) against `sys`: writes whether the
 * closed loop is Hurwitz and its H2 norm (NaN when unstable).
 *
 * # Safety
 * `sys` must be a live handle, `gains_json` NUL-terminated, outputs writable.
 */
enum CsStatus cs_check_gains(const struct CsSystem *sys,
                             const char *gains_json,
                             bool *hurwitz,
                             double *h2);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void cs_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHORDSYNTH_H */
