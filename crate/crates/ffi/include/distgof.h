#ifndef DISTGOF_H
#define DISTGOF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values are stable.
typedef enum DgStatus {
  DG_STATUS_OK = 0,
  DG_STATUS_NULL_POINTER = 1,
  DG_STATUS_INVALID_UTF8 = 2,
  // Malformed or incomplete config, unknown preset.
  DG_STATUS_CONFIG = 3,
  // Arguments violate a documented precondition.
  DG_STATUS_VALIDATION = 4,
  // Parameters outside the regime a procedure is defined for.
  DG_STATUS_REGIME = 5,
  // Bracket or other numerical failure.
  DG_STATUS_NUMERICAL = 6,
  DG_STATUS_PANIC = 7,
} DgStatus;

// Finite probability measure on integer atoms.
typedef struct DgMeasure DgMeasure;

// A protocol spec, calibrated or not.
typedef struct DgProtocol DgProtocol;

// Result of one experiment run.
typedef struct DgRun DgRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Borrowed until
// the next call on the same thread.
const char *dg_last_error(void);

// Process exit code the command-line tool uses for `status`.
int32_t dg_status_exit_code(enum DgStatus status);

// Library version as a static string.
const char *dg_version(void);

// Run a subcommand (`calibrate`, `risk`, `sweep`, `equiv` or `noneq`).
//
// `config_json` may be null (then `preset` must name a preset); `preset`
// may be null. `seed` may be null to use the config's seed. `jobs` = 0
// uses the config's value or 1.
//
// # Safety
// String arguments must be null or valid NUL-terminated strings; `seed`
// must be null or point to a readable `uint64_t`; `out` must be a valid
// pointer to writable storage for one handle.
enum DgStatus dg_run(const char *command,
                     const char *config_json,
                     const char *preset,
                     const uint64_t *seed,
                     uint32_t jobs,
                     struct DgRun **out);

// Main results CSV, metadata block included.
//
// # Safety
// `run` must be null or a handle from [`dg_run`] not yet freed.
const char *dg_run_csv(const struct DgRun *run);

// Fit summary CSV, or null for commands without one.
//
// # Safety
// As [`dg_run_csv`].
const char *dg_run_summary_csv(const struct DgRun *run);

// Structured report as JSON.
//
// # Safety
// As [`dg_run_csv`].
const char *dg_run_report_json(const struct DgRun *run);

// Hex SHA-256 of the resolved config and seed.
//
// # Safety
// As [`dg_run_csv`].
const char *dg_run_config_hash(const struct DgRun *run);

// # Safety
// `run` must be null or a handle from [`dg_run`]; it must not be used afterwards.
void dg_run_free(struct DgRun *run);

// # Safety
// `atoms` and `weights` must point to `len` readable elements; `out` must
// be valid for one write.
enum DgStatus dg_measure_new(const int64_t *atoms,
                             const double *weights,
                             size_t len,
                             struct DgMeasure **out);

// Total variation distance, ½ Σ |p − q|.
//
// # Safety
// `p` and `q` must be live measure handles; `out` valid for one write.
enum DgStatus dg_tv(const struct DgMeasure *p, const struct DgMeasure *q, double *out);

// # Safety
// `m` must be null or a live measure handle; it must not be used afterwards.
void dg_measure_free(struct DgMeasure *m);

// Parse a protocol spec from its JSON form.
//
// # Safety
// `json` must be a valid NUL-terminated string; `out` valid for one write.
enum DgStatus dg_protocol_from_json(const char *json, struct DgProtocol **out);

// Calibrate in place under the uniform null.
//
// # Safety
// `p` must be a live protocol handle.
enum DgStatus dg_protocol_calibrate(struct DgProtocol *p,
                                    double alpha,
                                    size_t reps,
                                    uint64_t seed,
                                    uint32_t jobs);

// Threshold of a calibrated protocol.
//
// # Safety
// `p` must be a live protocol handle; `out` valid for one write.
enum DgStatus dg_protocol_threshold(const struct DgProtocol *p, double *out);

// Fresh-sample type I error of a calibrated protocol.
//
// # Safety
// `p` must be a live protocol handle; `out` valid for one write.
enum DgStatus dg_protocol_type_one(const struct DgProtocol *p,
                                   size_t reps,
                                   uint64_t seed,
                                   uint32_t jobs,
                                   double *out);

// # Safety
// `p` must be null or a live protocol handle; it must not be used afterwards.
void dg_protocol_free(struct DgProtocol *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTGOF_H */
