#ifndef RELPU_H
#define RELPU_H

#include <stddef.h>
#include <stdint.h>

typedef enum RelpuStatus {
  RELPU_STATUS_OK = 0,
  RELPU_STATUS_NULL_POINTER = 1,
  RELPU_STATUS_INVALID_ARGUMENT = 2,
  RELPU_STATUS_PARSE = 3,
  RELPU_STATUS_IO = 4,
  RELPU_STATUS_NUMERICAL = 5,
  RELPU_STATUS_INVALID_MODEL = 6,
  RELPU_STATUS_CONFIG = 7,
  RELPU_STATUS_BUFFER_TOO_SMALL = 8,
  RELPU_STATUS_PANIC = 9,
} RelpuStatus;

/**
 * Opaque point cloud.
 */
typedef struct RelpuCloud RelpuCloud;

/**
 * Opaque trained model.
 */
typedef struct RelpuModel RelpuModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *relpu_last_error(void);

/**
 * Copies `count` points from `xyz` (`3 * count` doubles, row-major).
 *
 * # Safety
 * `xyz` must point to `3 * count` readable doubles; `out` must be writable.
 */
enum RelpuStatus relpu_cloud_from_buffer(const double *xyz, size_t count, struct RelpuCloud **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RelpuStatus relpu_cloud_read_xyz(const char *path, struct RelpuCloud **out);

/**
 * # Safety
 * `cloud` must be a live handle and `path` a NUL-terminated string.
 */
enum RelpuStatus relpu_cloud_write_xyz(const struct RelpuCloud *cloud, const char *path);

/**
 * Number of points, 0 for NULL.
 *
 * # Safety
 * `cloud` must be NULL or a live handle.
 */
size_t relpu_cloud_len(const struct RelpuCloud *cloud);

/**
 * Writes the points to `out` as `3 * len` doubles. Fails with
 * `BufferTooSmall` when `capacity` (in points) is below the length.
 *
 * # Safety
 * `cloud` must be a live handle; `out` must hold `3 * capacity` doubles.
 */
enum RelpuStatus relpu_cloud_copy_points(const struct RelpuCloud *cloud,
                                         double *out,
                                         size_t capacity);

/**
 * # Safety
 * `cloud` must be NULL or a handle not yet freed.
 */
void relpu_cloud_free(struct RelpuCloud *cloud);

/**
 * Squared-distance Chamfer distance between two clouds.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` must be writable.
 */
enum RelpuStatus relpu_chamfer(const struct RelpuCloud *a, const struct RelpuCloud *b, double *out);

/**
 * Symmetric Hausdorff distance between two clouds.
 *
 * # Safety
 * `a`, `b` must be live handles; `out` must be writable.
 */
enum RelpuStatus relpu_hausdorff(const struct RelpuCloud *a,
                                 const struct RelpuCloud *b,
                                 double *out);

/**
 * Farthest point sampling of `m` indices starting from `start`.
 *
 * # Safety
 * `cloud` must be a live handle; `out` must hold `m` indices.
 */
enum RelpuStatus relpu_fps(const struct RelpuCloud *cloud, size_t m, size_t start, size_t *out);

/**
 * Loads a model from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RelpuStatus relpu_model_load(const char *path, struct RelpuModel **out);

/**
 * Upsampling ratio, 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t relpu_model_ratio(const struct RelpuModel *model);

/**
 * Upsamples a whole cloud to `ratio * len` points using `patches` patches
 * of `patch_points` points each.
 *
 * # Safety
 * `model` and `cloud` must be live handles; `out` must be writable.
 */
enum RelpuStatus relpu_model_upsample(const struct RelpuModel *model,
                                      const struct RelpuCloud *cloud,
                                      size_t patches,
                                      size_t patch_points,
                                      uint64_t seed,
                                      struct RelpuCloud **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void relpu_model_free(struct RelpuModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELPU_H */
