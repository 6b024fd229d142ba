#ifndef VISTA_H
#define VISTA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VistaStatus {
  VISTA_STATUS_OK = 0,
  VISTA_STATUS_NULL_ARGUMENT = 1,
  VISTA_STATUS_INVALID_ARGUMENT = 2,
  VISTA_STATUS_IO = 3,
  VISTA_STATUS_PARSE = 4,
  VISTA_STATUS_VALIDATION = 5,
  VISTA_STATUS_TENSOR = 6,
  VISTA_STATUS_DIMENSION = 7,
  VISTA_STATUS_TOO_LARGE = 8,
  VISTA_STATUS_PANIC = 9,
} VistaStatus;

/*
 Ground-truth annotations with their taxonomy.
 */
typedef struct VistaGroundTruth VistaGroundTruth;

/*
 A loaded or computed prediction set.
 */
typedef struct VistaPredictions VistaPredictions;

typedef struct VistaEvalConfig {
  double iou_min;
  double ttc_max_error;
  size_t top_k;
} VistaEvalConfig;

/*
 Mean AP per variant, in percent.
 */
typedef struct VistaMaps {
  double overall;
  double noun;
  double noun_verb;
  double noun_ttc;
} VistaMaps;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *vista_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *vista_version(void);

/*
 Intersection over union of two `[x1, y1, x2, y2]` boxes.

 # Safety
 `a` and `b` must point to four doubles; `out` must be writable.
 */
enum VistaStatus vista_iou(const double *a, const double *b, double *out);

/*
 Softplus mapping from a raw head output to a non-negative ttc.

 # Safety
 `out` must be writable.
 */
enum VistaStatus vista_ttc_from_raw(double raw, double *out);

/*
 Writes `frame_count` ascending frame timestamps into `out_times`.

 # Safety
 `out_times` must have room for `frame_count` doubles.
 */
enum VistaStatus vista_plan_frames(double query_time,
                                   size_t frame_count,
                                   double sample_rate,
                                   double *out_times);

/*
 Loads a submission document.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable. On
 success `*out` owns a handle to release with [`vista_predictions_free`].
 */
enum VistaStatus vista_predictions_load(const char *path, struct VistaPredictions **out);

/*
 Writes a submission document.

 # Safety
 `preds` must be a live handle and `path` a NUL-terminated string.
 */
enum VistaStatus vista_predictions_write(const struct VistaPredictions *preds, const char *path);

/*
 Total hypotheses across examples; 0 for NULL.

 # Safety
 `preds` must be NULL or a live handle.
 */
size_t vista_predictions_count(const struct VistaPredictions *preds);

/*
 Number of examples; 0 for NULL.

 # Safety
 `preds` must be NULL or a live handle.
 */
size_t vista_predictions_examples(const struct VistaPredictions *preds);

/*
 # Safety
 `preds` must be NULL or a handle not yet freed.
 */
void vista_predictions_free(struct VistaPredictions *preds);

/*
 Loads a ground-truth document.

 # Safety
 As [`vista_predictions_load`]; release with [`vista_ground_truth_free`].
 */
enum VistaStatus vista_ground_truth_load(const char *path, struct VistaGroundTruth **out);

/*
 Number of annotations; 0 for NULL.

 # Safety
 `gt` must be NULL or a live handle.
 */
size_t vista_ground_truth_count(const struct VistaGroundTruth *gt);

/*
 # Safety
 `gt` must be NULL or a handle not yet freed.
 */
void vista_ground_truth_free(struct VistaGroundTruth *gt);

/*
 Default evaluation settings (iou > 0.5, |ttc error| < 0.25 s, top 5).
 */
struct VistaEvalConfig vista_eval_config_default(void);

/*
 Evaluates `preds` against `gt`. `config` may be NULL for the defaults.

 # Safety
 Handles must be live; `config` NULL or readable; `out` writable.
 */
enum VistaStatus vista_evaluate(const struct VistaPredictions *preds,
                                const struct VistaGroundTruth *gt,
                                const struct VistaEvalConfig *config,
                                struct VistaMaps *out);

/*
 Merges `count` prediction sets with the default ensemble settings.

 # Safety
 `sources` must point to `count` live handles; `out` must be writable.
 Release the result with [`vista_predictions_free`].
 */
enum VistaStatus vista_ensemble(const struct VistaPredictions *const *sources,
                                size_t count,
                                struct VistaPredictions **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VISTA_H */
