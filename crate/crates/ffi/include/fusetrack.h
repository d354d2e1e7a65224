/* Generated by cbindgen from crates/ffi/src/lib.rs. */

#ifndef FUSETRACK_H
#define FUSETRACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define FT_PRESET_KITTI 0

#define FT_PRESET_NUSCENES 1

typedef enum FtStatus {
  FT_STATUS_OK = 0,
  FT_STATUS_NULL_POINTER = 1,
  FT_STATUS_INVALID_UTF8 = 2,
  FT_STATUS_INVALID_ARGUMENT = 3,
  FT_STATUS_PARSE_ERROR = 4,
  FT_STATUS_CONFIG_ERROR = 5,
  FT_STATUS_SEQUENCING_ERROR = 6,
  FT_STATUS_IO_ERROR = 7,
  FT_STATUS_PANIC = 8,
} FtStatus;

/**
 * Opaque tracker handle.
 */
typedef struct FtTracker FtTracker;

/**
 * Oriented box: center `x y z`, size `h w l`, rotation `yaw` about the
 * vertical axis.
 */
typedef struct FtBox3D {
  double x;
  double y;
  double z;
  double h;
  double w;
  double l;
  double yaw;
} FtBox3D;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ft_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into the library on this thread.
 */
const char *ft_last_error_message(void);

/**
 * Creates a tracker.
 *
 * `config_json` (nullable) is merged over the preset `FT_PRESET_KITTI` or
 * `FT_PRESET_NUSCENES`. `calibration` is rig JSON or KITTI calibration text.
 *
 * # Safety
 * String arguments are NULL or NUL-terminated; `out` is a writable pointer.
 */
enum FtStatus ft_tracker_new(const char *config_json,
                             uint32_t preset,
                             const char *calibration,
                             struct FtTracker **out);

/**
 * Releases a tracker. NULL is ignored.
 *
 * # Safety
 * `tracker` is NULL or a handle from [`ft_tracker_new`] not yet freed.
 */
void ft_tracker_free(struct FtTracker *tracker);

/**
 * Processes one frame.
 *
 * `detections_jsonl` (nullable) holds detection lines in the sensor frame,
 * all with `"frame": frame`. `pose` (nullable, identity when NULL) points
 * to 12 doubles: the sensor → world transform `[R | t]` in row-major
 * order. On success `*out_json` receives the frame output as JSON, to be
 * released with [`ft_string_free`].
 *
 * # Safety
 * `tracker` is a live handle; `detections_jsonl` is NULL or
 * NUL-terminated; `pose` is NULL or points to 12 readable doubles;
 * `out_json` is writable.
 */
enum FtStatus ft_tracker_step(struct FtTracker *tracker,
                              uint32_t frame,
                              const char *detections_jsonl,
                              const double *pose,
                              char **out_json);

/**
 * Number of live tracks, confirmed or not.
 *
 * # Safety
 * `tracker` is a live handle; `out` is writable.
 */
enum FtStatus ft_tracker_live_tracks(const struct FtTracker *tracker, uintptr_t *out);

/**
 * Releases a string returned by the library. NULL is ignored.
 *
 * # Safety
 * `s` is NULL or a string from this library not yet freed.
 */
void ft_string_free(char *s);

/**
 * Volume IoU of two oriented boxes.
 *
 * # Safety
 * All pointers are valid for the call.
 */
enum FtStatus ft_iou_3d(const struct FtBox3D *a, const struct FtBox3D *b, double *out);

/**
 * Center and size distance scaled by the orientation penalty.
 *
 * # Safety
 * All pointers are valid for the call.
 */
enum FtStatus ft_scaled_distance(const struct FtBox3D *a, const struct FtBox3D *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUSETRACK_H */
