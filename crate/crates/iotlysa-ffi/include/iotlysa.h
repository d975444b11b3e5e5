#ifndef IOTLYSA_H
#define IOTLYSA_H

/* Generated by cbindgen from iotlysa-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum IotStatus {
  /**
   * The call succeeded.
   */
  IOT_STATUS_OK = 0,
  /**
   * The system source did not parse or validate.
   */
  IOT_STATUS_PARSE_ERROR = 1,
  /**
   * A configuration, property name, or serialized input was unusable.
   */
  IOT_STATUS_CONFIG_ERROR = 2,
  /**
   * The checked property does not hold; the report has the witnesses.
   */
  IOT_STATUS_PROPERTY_VIOLATED = 3,
  /**
   * An internal failure; the error message has details.
   */
  IOT_STATUS_RUNTIME_ERROR = 4,
  /**
   * A required pointer argument was null.
   */
  IOT_STATUS_NULL_POINTER = 5,
  /**
   * A string argument was not valid UTF-8.
   */
  IOT_STATUS_INVALID_UTF8 = 6,
} IotStatus;

/**
 * An analysis configuration resolved against one system.
 */
typedef struct IotConfig IotConfig;

/**
 * A solved estimate of stores, messages, computed values and actions.
 */
typedef struct IotEstimate IotEstimate;

/**
 * A parsed and validated system of nodes.
 */
typedef struct IotSystem IotSystem;

/**
 * One recorded simulation run.
 */
typedef struct IotTrace IotTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the toolkit as a static NUL-terminated string. Do not free.
 */
const char *iotlysa_version(void);

/**
 * Message of the most recent failure on the calling thread, or null if
 * nothing failed yet. Valid until the next failing call on this thread; do
 * not free.
 */
const char *iotlysa_last_error(void);

/**
 * Parses and validates a system from source text.
 *
 * # Safety
 * `source` must point to a NUL-terminated string and `out` to a writable
 * pointer slot.
 */
enum IotStatus iotlysa_system_parse(const char *source, struct IotSystem **out);

/**
 * Prints a system back to its concrete syntax, which parses to the same
 * system.
 *
 * # Safety
 * `system` must be a live handle and `out` a writable pointer slot.
 */
enum IotStatus iotlysa_system_render(const struct IotSystem *system, char **out);

/**
 * Releases a system handle. Null is a no-op.
 *
 * # Safety
 * `system` must come from this library and not be used afterwards.
 */
void iotlysa_system_free(struct IotSystem *system);

/**
 * Parses a JSON configuration and resolves it against `system`.
 *
 * # Safety
 * `json` must point to a NUL-terminated string, `system` must be a live
 * handle, and `out` a writable pointer slot.
 */
enum IotStatus iotlysa_config_parse(const char *json,
                                    const struct IotSystem *system,
                                    struct IotConfig **out);

/**
 * Builds the default configuration resolved against `system`.
 *
 * # Safety
 * `system` must be a live handle and `out` a writable pointer slot.
 */
enum IotStatus iotlysa_config_default(const struct IotSystem *system, struct IotConfig **out);

/**
 * Releases a config handle. Null is a no-op.
 *
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void iotlysa_config_free(struct IotConfig *config);

/**
 * Solves the least estimate of `system` under `config`.
 *
 * # Safety
 * `system` and `config` must be live handles and `out` a writable pointer
 * slot.
 */
enum IotStatus iotlysa_analyze(const struct IotSystem *system,
                               const struct IotConfig *config,
                               struct IotEstimate **out);

/**
 * Serializes an estimate to pretty-printed JSON, byte-identical to the
 * files the command line tool writes.
 *
 * # Safety
 * `estimate` must be a live handle and `out` a writable pointer slot.
 */
enum IotStatus iotlysa_estimate_to_json(const struct IotEstimate *estimate, char **out);

/**
 * Loads an estimate previously serialized with `iotlysa_estimate_to_json`.
 *
 * # Safety
 * `json` must point to a NUL-terminated string and `out` to a writable
 * pointer slot.
 */
enum IotStatus iotlysa_estimate_parse(const char *json, struct IotEstimate **out);

/**
 * Releases an estimate handle. Null is a no-op.
 *
 * # Safety
 * `estimate` must come from this library and not be used afterwards.
 */
void iotlysa_estimate_free(struct IotEstimate *estimate);

/**
 * Runs one simulation with the given seed. The seed overrides the
 * configured one; the step budget and sensor streams come from `config`.
 *
 * # Safety
 * `system` and `config` must be live handles and `out` a writable pointer
 * slot.
 */
enum IotStatus iotlysa_simulate(const struct IotSystem *system,
                                const struct IotConfig *config,
                                uint64_t seed,
                                struct IotTrace **out);

/**
 * Serializes a trace to newline-delimited JSON, one event per line.
 *
 * # Safety
 * `trace` must be a live handle and `out` a writable pointer slot.
 */
enum IotStatus iotlysa_trace_to_ndjson(const struct IotTrace *trace, char **out);

/**
 * Loads a trace previously serialized with `iotlysa_trace_to_ndjson`.
 *
 * # Safety
 * `ndjson` must point to a NUL-terminated string and `out` to a writable
 * pointer slot.
 */
enum IotStatus iotlysa_trace_parse(const char *ndjson, struct IotTrace **out);

/**
 * Releases a trace handle. Null is a no-op.
 *
 * # Safety
 * `trace` must come from this library and not be used afterwards.
 */
void iotlysa_trace_free(struct IotTrace *trace);

/**
 * Replays a trace against an estimate. Writes a JSON array of violations
 * and returns `Ok` when it is empty, `PropertyViolated` otherwise.
 *
 * # Safety
 * `trace` and `estimate` must be live handles and `out` a writable pointer
 * slot.
 */
enum IotStatus iotlysa_cross_check(const struct IotTrace *trace,
                                   const struct IotEstimate *estimate,
                                   char **out);

/**
 * Checks a named property of a solved estimate and writes a JSON array of
 * verdicts. Supported names: "confinement", "levels", "policy",
 * "actuators". Returns `Ok` when every verdict holds, `PropertyViolated`
 * when one fails, and `ConfigError` for an unknown name or a configuration
 * that cannot support the check.
 *
 * # Safety
 * `system`, `config` and `estimate` must be live handles, `property` must
 * point to a NUL-terminated string, and `out` to a writable pointer slot.
 */
enum IotStatus iotlysa_check(const struct IotSystem *system,
                             const struct IotConfig *config,
                             const struct IotEstimate *estimate,
                             const char *property,
                             char **out);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void iotlysa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IOTLYSA_H */
