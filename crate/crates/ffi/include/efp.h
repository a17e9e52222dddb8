#ifndef EFP_H
#define EFP_H

/* Generated from src/lib.rs by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EfpClassifierKind {
  EFP_CLASSIFIER_KIND_FREQUENCY = 0,
  EFP_CLASSIFIER_KIND_RECURRENT = 1,
} EfpClassifierKind;

typedef enum EfpEventKind {
  EFP_EVENT_KIND_STEP = 0,
  EFP_EVENT_KIND_CONTEXT = 1,
  EFP_EVENT_KIND_FAILURE = 2,
} EfpEventKind;

typedef enum EfpStatus {
  EFP_STATUS_OK = 0,
  EFP_STATUS_NULL_POINTER = 1,
  EFP_STATUS_INVALID_ARGUMENT = 2,
  EFP_STATUS_IO = 3,
  EFP_STATUS_PARSE = 4,
  EFP_STATUS_MODEL = 5,
  EFP_STATUS_PREDICT = 6,
  /**
   * Nothing to return; not an error.
   */
  EFP_STATUS_EMPTY = 7,
  EFP_STATUS_PANIC = 99,
} EfpStatus;

/**
 * A trained next-step classifier.
 */
typedef struct EfpClassifier EfpClassifier;

/**
 * An event bus with one prediction component per running instance.
 */
typedef struct EfpEngine EfpEngine;

/**
 * A mined or parsed process model.
 */
typedef struct EfpModel EfpModel;

/**
 * A trace under construction.
 */
typedef struct EfpTrace EfpTrace;

typedef struct EfpLimits {
  size_t max_depth;
  size_t max_breadth;
  double min_probability;
} EfpLimits;

typedef struct EfpEstimate {
  double p_fail;
  double lower;
  double upper;
} EfpEstimate;

typedef struct EfpMetrics {
  double precision;
  double recall;
  double mcc;
} EfpMetrics;

/**
 * One prediction taken from an engine. `instance_id` is owned by the
 * engine and stays valid until the next poll on it.
 */
typedef struct EfpPrediction {
  const char *instance_id;
  size_t at_event_index;
  double p_fail;
  double lower;
  double upper;
  int64_t timestamp_ms;
} EfpPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread; empty after a
 * successful one. Valid until the next call on the same thread.
 */
const char *efp_last_error(void);

/**
 * Library version as a static string.
 */
const char *efp_version(void);

/**
 * Traversal defaults: depth 20, breadth 5, minimum probability 1e-4.
 */
struct EfpLimits efp_limits_default(void);

/**
 * Parses a model from its text form.
 *
 * # Safety
 * `text_ptr` must be a valid C string and `out` a valid pointer.
 */
enum EfpStatus efp_model_parse(const char *text_ptr, struct EfpModel **out);

/**
 * Mines a model from an XES log.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum EfpStatus efp_model_mine_xes(const char *path, struct EfpModel **out);

/**
 * Number of states of a model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t efp_model_state_count(const struct EfpModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void efp_model_free(struct EfpModel *model);

/**
 * Trains a classifier on a labeled XES log.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum EfpStatus efp_classifier_train_xes(const char *path,
                                        enum EfpClassifierKind kind,
                                        uint64_t seed,
                                        struct EfpClassifier **out);

/**
 * Loads a checkpoint written by `efp train` or [`efp_classifier_save`].
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum EfpStatus efp_classifier_load(const char *path, struct EfpClassifier **out);

/**
 * # Safety
 * `classifier` must be a live handle and `path` a valid C string.
 */
enum EfpStatus efp_classifier_save(const struct EfpClassifier *classifier, const char *path);

/**
 * # Safety
 * `classifier` must be null or a handle not yet freed.
 */
void efp_classifier_free(struct EfpClassifier *classifier);

/**
 * Starts an empty trace.
 *
 * # Safety
 * `instance_id` must be a valid C string and `out` a valid pointer.
 */
enum EfpStatus efp_trace_new(const char *instance_id, struct EfpTrace **out);

/**
 * Appends an event with `len` numeric payload fields; `keys` and `values`
 * may be null when `len` is 0. Events are kept in timestamp order.
 *
 * # Safety
 * `trace` must be a live handle, `name` a valid C string, and `keys` and
 * `values` must point to `len` elements.
 */
enum EfpStatus efp_trace_push(struct EfpTrace *trace,
                              enum EfpEventKind kind,
                              const char *name,
                              int64_t timestamp_ms,
                              const char *const *keys,
                              const double *values,
                              size_t len);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t efp_trace_len(const struct EfpTrace *trace);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void efp_trace_free(struct EfpTrace *trace);

/**
 * Probability that `trace` ends in failure. `limits` may be null for the
 * defaults.
 *
 * # Safety
 * Handles must be live; `limits` null or valid; `out` valid.
 */
enum EfpStatus efp_failure_probability(const struct EfpTrace *trace,
                                       const struct EfpClassifier *classifier,
                                       const struct EfpModel *model,
                                       const struct EfpLimits *limits,
                                       struct EfpEstimate *out);

/**
 * Precision, recall and Matthews correlation of a confusion matrix.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EfpStatus efp_metrics(double tp, double fn_, double fp, double tn, struct EfpMetrics *out);

/**
 * Creates an engine around copies of `classifier` and `model`. When
 * `learn` is non-zero, completed instances train the engine's classifier.
 *
 * # Safety
 * Handles must be live; `limits` null or valid; `out` valid.
 */
enum EfpStatus efp_engine_new(const struct EfpClassifier *classifier,
                              const struct EfpModel *model,
                              const struct EfpLimits *limits,
                              int32_t learn,
                              struct EfpEngine **out);

/**
 * Publishes one event of `instance_id`, starting a prediction component
 * for the instance on first sight. Predictions become available through
 * [`efp_engine_poll`].
 *
 * # Safety
 * `engine` must be a live handle, the strings valid, and `keys` and
 * `values` must point to `len` elements.
 */
enum EfpStatus efp_engine_publish(struct EfpEngine *engine,
                                  const char *instance_id,
                                  enum EfpEventKind kind,
                                  const char *name,
                                  int64_t timestamp_ms,
                                  const char *const *keys,
                                  const double *values,
                                  size_t len);

/**
 * Takes the oldest pending prediction. Returns `EFP_STATUS_EMPTY` when none
 * is pending, and `EFP_STATUS_PREDICT` for a failed prediction, whose
 * message is then available from [`efp_last_error`].
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum EfpStatus efp_engine_poll(struct EfpEngine *engine, struct EfpPrediction *out);

/**
 * Number of instances that have not completed yet.
 *
 * # Safety
 * `engine` must be null or a live handle.
 */
size_t efp_engine_running(const struct EfpEngine *engine);

/**
 * # Safety
 * `engine` must be null or a handle not yet freed.
 */
void efp_engine_free(struct EfpEngine *engine);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFP_H */
