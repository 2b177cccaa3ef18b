/* Generated from crates/ffi/src/lib.rs; do not edit. */

#ifndef DUALMOCAP_H
#define DUALMOCAP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every call.
 */
typedef enum {
  DM_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  DM_STATUS_NULL_ARGUMENT = 1,
  /**
   * Malformed, missing or inconsistent input, including unreadable files.
   */
  DM_STATUS_INPUT = 2,
  /**
   * The inputs were well formed but the computation failed.
   */
  DM_STATUS_NUMERICAL = 3,
  /**
   * A bug inside the library; the call had no effect.
   */
  DM_STATUS_INTERNAL = 4,
} DmStatus;

/**
 * Which aligned joint error [`dm_joint_error`] reports.
 */
typedef enum {
  /**
   * Each chunk aligned by its first two frames.
   */
  DM_JOINT_ERROR_TWO_FRAME_ALIGNED = 0,
  /**
   * Each chunk aligned as a whole.
   */
  DM_JOINT_ERROR_CHUNK_ALIGNED = 1,
} DmJointError;

/**
 * Opaque point cloud.
 */
typedef struct DmCloud DmCloud;

/**
 * Opaque handle to a loaded capture session (manifest plus the files it
 * references).
 */
typedef struct DmSession DmSession;

/**
 * `x' = scale * rotation * x + translation`, rotation row-major.
 */
typedef struct {
  double scale;
  double rotation[9];
  double translation[3];
} DmSimilarity;

/**
 * Pinhole intrinsics in pixels.
 */
typedef struct {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} DmIntrinsics;

/**
 * One view's sighting of a point: pixel, confidence in [0, 1] and the
 * camera pose `x_cam = rotation * x_world + translation`.
 */
typedef struct {
  double pixel[2];
  double confidence;
  double rotation[9];
  double translation[3];
  DmIntrinsics intrinsics;
} DmObservation;

/**
 * Per-view yaw (radians) and translation (m) into the world frame.
 */
typedef struct {
  double yaw;
  double translation[3];
} DmOffset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. The pointer stays valid until the next call on the thread.
 */
const char *dm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dm_version(void);

/**
 * Least-squares similarity taking `n` source points onto `n` target
 * points (`3n` doubles each). With `yaw_only` the rotation is restricted
 * to the vertical axis; without `with_scale` the scale is fixed to 1.
 *
 * # Safety
 * `source` and `target` must point to `3 * n` readable doubles and `out`
 * to a writable `DmSimilarity`.
 */
DmStatus dm_procrustes(const double *source,
                       const double *target,
                       size_t n,
                       bool with_scale,
                       bool yaw_only,
                       DmSimilarity *out_transform);

/**
 * Triangulates one point from `n` observations. Views below
 * `confidence_gate` are ignored; rays closer than `min_ray_angle_deg`
 * are rejected as degenerate.
 *
 * # Safety
 * `observations` must point to `n` readable records, `out_xyz` to three
 * writable doubles and `out_residual_px` to one.
 */
DmStatus dm_triangulate(const DmObservation *observations,
                        size_t n,
                        double confidence_gate,
                        double min_ray_angle_deg,
                        double *out_xyz,
                        double *out_residual_px);

/**
 * Copies `n` points (`3n` doubles) into a new cloud.
 *
 * # Safety
 * `xyz` must point to `3 * n` readable doubles and `out_cloud` to a
 * writable handle slot. Release the handle with [`dm_cloud_free`].
 */
DmStatus dm_cloud_new(const double *xyz, size_t n, DmCloud **out_cloud);

/**
 * # Safety
 * `cloud` must be NULL or a handle from [`dm_cloud_new`] not yet freed.
 */
void dm_cloud_free(DmCloud *cloud);

/**
 * Number of points in the cloud, 0 for NULL.
 *
 * # Safety
 * `cloud` must be NULL or a live handle.
 */
size_t dm_cloud_len(const DmCloud *cloud);

/**
 * Symmetric Chamfer distance: mean squared nearest-neighbour distance
 * each way, summed.
 *
 * # Safety
 * `a` and `b` must be live handles and `out_value` writable.
 */
DmStatus dm_chamfer(const DmCloud *a, const DmCloud *b, double *out_value);

/**
 * Mean per-joint error in millimetres over non-overlapping chunks of
 * `chunk` frames. `pred` and `gt` hold `frames * joints * 3` doubles.
 *
 * # Safety
 * Both buffers must be readable for the stated size and `out_mm` writable.
 */
DmStatus dm_joint_error(const double *pred,
                        const double *gt,
                        size_t frames,
                        size_t joints,
                        size_t chunk,
                        DmJointError kind,
                        double *out_mm);

/**
 * Root translation error in percent of the ground-truth path length.
 * `pred_root` and `gt_root` hold `frames * 3` doubles.
 *
 * # Safety
 * Both buffers must be readable for the stated size and `out_percent`
 * writable.
 */
DmStatus dm_root_translation_error(const double *pred_root,
                                   const double *gt_root,
                                   size_t frames,
                                   double *out_percent);

/**
 * Loads a session manifest.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated UTF-8 path and `out_session`
 * a writable handle slot. Release the handle with [`dm_session_free`].
 */
DmStatus dm_session_open(const char *manifest_path, DmSession **out_session);

/**
 * # Safety
 * `session` must be NULL or a handle from [`dm_session_open`] not yet
 * freed.
 */
void dm_session_free(DmSession *session);

/**
 * Number of views, 0 for NULL.
 *
 * # Safety
 * `session` must be NULL or a live handle.
 */
size_t dm_session_view_count(const DmSession *session);

/**
 * Estimates per-view offsets from the registered keyframes and refines
 * them with the default calibration settings. `out_offsets` receives one
 * record per view, `capacity` of them at most. `max_iterations` of 0
 * keeps the default.
 *
 * # Safety
 * `session` must be a live handle and `out_offsets` writable for
 * `capacity` records.
 */
DmStatus dm_session_calibrate(const DmSession *session,
                              int max_iterations,
                              DmOffset *out_offsets,
                              size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALMOCAP_H */
