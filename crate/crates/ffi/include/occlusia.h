#ifndef OCCLUSIA_H
#define OCCLUSIA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OccStatus {
  OCC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  OCC_STATUS_NULL_POINTER = 1,
  OCC_STATUS_INVALID_INPUT = 2,
  OCC_STATUS_SHAPE_MISMATCH = 3,
  /**
   * A file or buffer could not be parsed.
   */
  OCC_STATUS_FORMAT = 4,
  OCC_STATUS_IO = 5,
  OCC_STATUS_DIVERGED = 6,
  /**
   * An internal error; the library state is unchanged.
   */
  OCC_STATUS_PANIC = 7,
} OccStatus;

/**
 * Network output stream, for receptive-field queries.
 */
typedef enum OccHead {
  OCC_HEAD_TRUNK = 0,
  OCC_HEAD_BOUNDARY = 1,
  OCC_HEAD_ORIENTATION = 2,
} OccHead;

/**
 * Trained network parameters.
 */
typedef struct OccModel OccModel;

/**
 * Image or per-pixel map.
 */
typedef struct OccRaster OccRaster;

/**
 * Inference output: boundary confidence, orientation, orientation confidence and total score.
 */
typedef struct OccScoredMap OccScoredMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or null if none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *occ_last_error(void);

/**
 * Library version as a static string.
 */
const char *occ_version(void);

/**
 * Copies `width * height * channels` floats from `data` into a new raster.
 *
 * # Safety
 * `data` must point to that many readable floats; `out` must be a valid pointer.
 */
enum OccStatus occ_raster_new(size_t width,
                              size_t height,
                              size_t channels,
                              const float *data,
                              struct OccRaster **out);

/**
 * Loads a `.fmap` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum OccStatus occ_raster_load_fmap(const char *path, struct OccRaster **out);

/**
 * Loads an 8-bit PNG scaled to `[0, 1]` (one channel for grayscale, three otherwise).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum OccStatus occ_raster_load_png(const char *path, struct OccRaster **out);

/**
 * Writes a raster as `.fmap`.
 *
 * # Safety
 * `raster` must be a live handle and `path` a NUL-terminated string.
 */
enum OccStatus occ_raster_save_fmap(const struct OccRaster *raster, const char *path);

/**
 * # Safety
 * `raster` must be a live handle or null.
 */
size_t occ_raster_width(const struct OccRaster *raster);

/**
 * # Safety
 * `raster` must be a live handle or null.
 */
size_t occ_raster_height(const struct OccRaster *raster);

/**
 * # Safety
 * `raster` must be a live handle or null.
 */
size_t occ_raster_channels(const struct OccRaster *raster);

/**
 * Borrowed pointer to the raster's samples, valid while the handle lives.
 *
 * # Safety
 * `raster` must be a live handle or null.
 */
const float *occ_raster_data(const struct OccRaster *raster);

/**
 * # Safety
 * `raster` must come from this library and not be freed twice; null is ignored.
 */
void occ_raster_free(struct OccRaster *raster);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum OccStatus occ_model_load(const char *path, struct OccModel **out);

/**
 * Seeded, untrained network of the standard architecture.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum OccStatus occ_model_init(size_t in_channels, uint64_t seed, struct OccModel **out);

/**
 * Writes a model file.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum OccStatus occ_model_save(const struct OccModel *model, const char *path);

/**
 * Receptive field in pixels of one output stream; 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t occ_model_receptive_field(const struct OccModel *model, enum OccHead head);

/**
 * # Safety
 * `model` must come from this library and not be freed twice; null is ignored.
 */
void occ_model_free(struct OccModel *model);

/**
 * Raw network outputs: boundary probability and unbounded orientation.
 *
 * # Safety
 * Handles must be live; output pointers must be valid.
 */
enum OccStatus occ_model_forward(const struct OccModel *model,
                                 const struct OccRaster *image,
                                 struct OccRaster **out_edge,
                                 struct OccRaster **out_orient);

/**
 * Thins and scores raw outputs. `nms_margin` below 1 selects the default.
 *
 * # Safety
 * Handles must be live; `out` must be a valid pointer.
 */
enum OccStatus occ_infer(const struct OccRaster *edge_prob,
                         const struct OccRaster *orient,
                         double nms_margin,
                         struct OccScoredMap **out);

/**
 * Full prediction for an image: multi-scale network pass, thinning and scoring.
 *
 * # Safety
 * Handles must be live; `scales` must point to `n_scales` doubles; `out` must be valid.
 */
enum OccStatus occ_predict(const struct OccModel *model,
                           const struct OccRaster *image,
                           const double *scales,
                           size_t n_scales,
                           struct OccScoredMap **out);

/**
 * Borrowed view of one of the scored map's rasters, valid while the map lives.
 * `which`: 0 boundary confidence, 1 orientation, 2 orientation confidence, 3 total.
 *
 * # Safety
 * `map` must be a live handle or null.
 */
const struct OccRaster *occ_scored_raster(const struct OccScoredMap *map, uint32_t which);

/**
 * Number of thinned boundary pixels.
 *
 * # Safety
 * `map` must be a live handle or null.
 */
size_t occ_scored_support(const struct OccScoredMap *map);

/**
 * # Safety
 * `map` must come from this library and not be freed twice; null is ignored.
 */
void occ_scored_free(struct OccScoredMap *map);

/**
 * Number of thresholds in an AOR curve.
 */
size_t occ_threshold_count(void);

/**
 * AOR curve of a prediction against ground truth. `recall` and `accuracy` receive
 * [`occ_threshold_count`] values each; undefined accuracy is written as NaN.
 *
 * # Safety
 * Handles must be live; the output arrays must hold the threshold count.
 */
enum OccStatus occ_eval_aor(const struct OccScoredMap *pred,
                            const struct OccRaster *gt_edge,
                            const struct OccRaster *gt_orient,
                            double max_dist_frac,
                            double *recall,
                            double *accuracy);

/**
 * Ground truth from an instance map and a segments document (the annotation tool's JSON).
 * `rho` at or below 0 selects the default matching radius.
 *
 * # Safety
 * Strings must be NUL-terminated; output pointers must be valid.
 */
enum OccStatus occ_ground_truth_from_segments(const char *instances_png,
                                              const char *classes_json,
                                              const char *segments_json,
                                              double rho,
                                              struct OccRaster **out_edge,
                                              struct OccRaster **out_orient);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCCLUSIA_H */
