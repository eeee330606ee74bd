#ifndef PREDICTIVE_OFFLOAD_H
#define PREDICTIVE_OFFLOAD_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Encoded frame size in bytes.
 */
#define PO_FRAME_LEN 21

typedef enum PoFrameKind {
  PO_FRAME_KIND_REQUEST = 1,
  PO_FRAME_KIND_RESPONSE = 2,
} PoFrameKind;

typedef enum PoStatus {
  PO_STATUS_OK = 0,
  PO_STATUS_NULL_POINTER = 1,
  PO_STATUS_INVALID_ARGUMENT = 2,
  PO_STATUS_INSUFFICIENT_OBSERVATIONS = 3,
  PO_STATUS_INVALID_PREDICTION = 4,
  PO_STATUS_UNDEFINED_CORRELATION = 5,
  PO_STATUS_NEED_MORE_BYTES = 6,
  PO_STATUS_PROTOCOL_ERROR = 7,
  PO_STATUS_BUFFER_TOO_SMALL = 8,
  PO_STATUS_PANIC = 9,
  PO_STATUS_INTERNAL = 10,
} PoStatus;

typedef enum PoTarget {
  PO_TARGET_LOCAL = 0,
  PO_TARGET_CLOUD = 1,
} PoTarget;

/**
 * Opaque engine handle.
 */
typedef struct PoEngine PoEngine;

/**
 * Opaque sliding window handle.
 */
typedef struct PoWindow PoWindow;

typedef struct PoLinearModel {
  double slope;
  double intercept;
  bool degenerate;
} PoLinearModel;

typedef struct PoDecision {
  enum PoTarget target;
  double p_local;
  double p_cloud;
} PoDecision;

/**
 * Result of planning a task. When `warmup` is true the caller must run the
 * task on both targets and report both times; `decision` is then zeroed.
 */
typedef struct PoPlan {
  bool warmup;
  struct PoDecision decision;
} PoPlan;

/**
 * Outcome of one replayed task.
 */
typedef struct PoStep {
  bool steady;
  /**
   * Meaningful only when `steady` is true.
   */
  struct PoDecision decision;
  enum PoTarget oracle_target;
} PoStep;

typedef struct PoFrame {
  enum PoFrameKind kind;
  uint64_t task_id;
  /**
   * Input size `d` for requests, elapsed seconds for responses.
   */
  double value;
} PoFrame;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *po_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL, or
 * 0 when there is none.
 */
size_t po_last_error(char *buf, size_t len);

enum PoStatus po_window_new(size_t capacity, struct PoWindow **out_window);

void po_window_free(struct PoWindow *window);

enum PoStatus po_window_push(struct PoWindow *window, double d, double t);

enum PoStatus po_window_len(const struct PoWindow *window, size_t *out_len);

enum PoStatus po_window_fit(const struct PoWindow *window, struct PoLinearModel *out_model);

enum PoStatus po_predict(const struct PoLinearModel *model, double d, double *out_time);

enum PoStatus po_decide(double p_local, double p_cloud, struct PoDecision *out_decision);

enum PoStatus po_engine_new(size_t window_capacity,
                            bool clamp_negative_predictions,
                            struct PoEngine **out_engine);

void po_engine_free(struct PoEngine *engine);

/**
 * Plans a live task. The caller executes as instructed and reports measured
 * times with [`po_engine_observe`].
 */
enum PoStatus po_engine_plan(struct PoEngine *engine,
                             uint64_t task_id,
                             double d,
                             struct PoPlan *out_plan);

enum PoStatus po_engine_observe(struct PoEngine *engine, enum PoTarget target, double d, double t);

enum PoStatus po_engine_step_replay(struct PoEngine *engine,
                                    uint64_t task_id,
                                    double d,
                                    double t_local,
                                    double t_cloud,
                                    struct PoStep *out_step);

enum PoStatus po_engine_window_len(const struct PoEngine *engine,
                                   enum PoTarget target,
                                   size_t *out_len);

/**
 * Encodes `frame` into `buf`, which must hold at least [`PO_FRAME_LEN`] bytes.
 */
enum PoStatus po_encode_frame(const struct PoFrame *frame, uint8_t *buf, size_t len);

/**
 * Decodes one frame from the front of `buf`. Returns
 * `PO_STATUS_NEED_MORE_BYTES` when the buffer holds only part of a frame.
 */
enum PoStatus po_decode_frame(const uint8_t *buf,
                              size_t len,
                              struct PoFrame *out_frame,
                              size_t *out_consumed);

enum PoStatus po_node_count(double distance, double grid_resolution, uint64_t *out_count);

double po_raw_input_size(uint64_t node_count);

enum PoStatus po_normalize_input_size(double raw, double map_scale, double *out_value);

enum PoStatus po_pearson(const double *xs, const double *ys, size_t len, double *out_r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREDICTIVE_OFFLOAD_H */
