#ifndef DEPTHFUSE_H
#define DEPTHFUSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum DfStatus {
  DF_STATUS_OK = 0,
  /*
   A required pointer was null or a string was not UTF-8.
   */
  DF_STATUS_INVALID_ARGUMENT = 1,
  /*
   A value violated a precondition (shape, range, grid mismatch).
   */
  DF_STATUS_DOMAIN = 2,
  /*
   A file did not match its expected layout.
   */
  DF_STATUS_FORMAT = 3,
  DF_STATUS_IO = 4,
  DF_STATUS_PANIC = 5,
} DfStatus;

/*
 Learned pipeline state: both networks, settings, frame counter.
 */
typedef struct DfFuser DfFuser;

/*
 Dense TSDF grid.
 */
typedef struct DfVolume DfVolume;

/*
 Network weight set (either architecture).
 */
typedef struct DfWeights DfWeights;

/*
 Pinhole intrinsics; pixel centers sit at integer + 0.5.
 */
typedef struct DfCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} DfCamera;

/*
 Camera-to-world transform; `rotation` is row-major.
 */
typedef struct DfPose {
  double rotation[9];
  double translation[3];
} DfPose;

typedef struct DfStandardStats {
  uint64_t valid_rays;
  uint64_t samples;
} DfStandardStats;

typedef struct DfPipelineConfig {
  float confidence_threshold;
  uint64_t filter_period;
  float weight_floor;
} DfPipelineConfig;

typedef struct DfFrameStats {
  uint64_t frame;
  uint64_t valid_rays;
  uint64_t rejected_rays;
  uint64_t voxels_touched;
  uint64_t reset_voxels;
  double routing_ms;
  double extraction_ms;
  double fusion_ms;
  double integration_ms;
  double post_filter_ms;
} DfFrameStats;

/*
 Metrics over one voxel mask; `accuracy` is a percentage. Undefined values
 (empty mask) are NaN.
 */
typedef struct DfMetrics {
  uint64_t voxels;
  double mad;
  double mse;
  double accuracy;
  double iou;
} DfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the calling thread's last error message into `buf` (NUL-terminated,
 truncated to `len`) and returns the full message length in bytes.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t df_last_error_message(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *df_version(void);

/*
 Creates a volume with zero values and weights.

 # Safety
 `dims` and `origin` point to three elements; `out` is writable.
 */
enum DfStatus df_volume_new(const uint32_t *dims,
                            const float *origin,
                            float voxel_size,
                            struct DfVolume **out);

/*
 # Safety
 `path` is a NUL-terminated UTF-8 string; `out` is writable.
 */
enum DfStatus df_volume_load(const char *path, struct DfVolume **out);

/*
 # Safety
 `vol` is a live handle; `path` is a NUL-terminated UTF-8 string.
 */
enum DfStatus df_volume_save(const struct DfVolume *vol, const char *path);

/*
 # Safety
 `vol` is null or a handle from this library not yet freed.
 */
void df_volume_free(struct DfVolume *vol);

/*
 Writes the grid dimensions to `dims[0..3]`.

 # Safety
 `vol` is a live handle; `dims` points to three writable elements.
 */
enum DfStatus df_volume_dims(const struct DfVolume *vol, uint32_t *dims);

/*
 Borrowed views of the value and weight arrays (x fastest, then y, then z).
 The pointers stay valid until the volume is modified or freed.

 # Safety
 `vol` is a live handle; the out pointers are writable or null.
 */
enum DfStatus df_volume_data(const struct DfVolume *vol,
                             const float **values,
                             const float **weights,
                             size_t *len);

/*
 Standard running-average integration of one depth frame (meters, z-depth,
 row-major `height x width`; values <= 0 or non-finite are missing).

 # Safety
 `vol` is a live handle; `depth` holds `camera.width * camera.height`
 floats; `stats` is null or writable.
 */
enum DfStatus df_integrate_standard(struct DfVolume *vol,
                                    const float *depth,
                                    const struct DfCamera *camera,
                                    const struct DfPose *pose,
                                    uint32_t truncation_voxels,
                                    struct DfStandardStats *stats);

/*
 # Safety
 `path` is a NUL-terminated UTF-8 string; `out` is writable.
 */
enum DfStatus df_weights_load(const char *path, struct DfWeights **out);

/*
 1 for routing weights, 2 for fusion weights, 0 on a null handle.

 # Safety
 `w` is null or a live handle.
 */
uint32_t df_weights_arch(const struct DfWeights *w);

/*
 # Safety
 `w` is null or a handle from this library not yet freed.
 */
void df_weights_free(struct DfWeights *w);

/*
 Default learned-pipeline settings.
 */
struct DfPipelineConfig df_pipeline_config_default(void);

/*
 Builds a learned fuser; the weight handles are copied and may be freed
 afterwards. `config` may be null for defaults.

 # Safety
 `routing` and `fusion` are live handles; `config` is null or valid; `out`
 is writable.
 */
enum DfStatus df_fuser_new(const struct DfWeights *routing,
                           const struct DfWeights *fusion,
                           const struct DfPipelineConfig *config,
                           struct DfFuser **out);

/*
 Window size `S` the fuser's fusion network was built for.

 # Safety
 `fuser` is null or a live handle.
 */
uint32_t df_fuser_samples(const struct DfFuser *fuser);

/*
 # Safety
 `fuser` is null or a handle from this library not yet freed.
 */
void df_fuser_free(struct DfFuser *fuser);

/*
 Runs the learned pipeline on one raw depth frame.

 # Safety
 As for [`df_integrate_standard`]; `fuser` is a live handle.
 */
enum DfStatus df_fuser_fuse_frame(struct DfFuser *fuser,
                                  struct DfVolume *vol,
                                  const float *depth,
                                  const struct DfCamera *camera,
                                  const struct DfPose *pose,
                                  struct DfFrameStats *stats);

/*
 Compares an estimate with ground truth on the same grid, over all voxels
 and over voxels observed in either volume.

 # Safety
 `est` and `gt` are live handles; the outputs are null or writable.
 */
enum DfStatus df_evaluate(const struct DfVolume *est,
                          const struct DfVolume *gt,
                          struct DfMetrics *all,
                          struct DfMetrics *observed);

/*
 Extracts the `iso` level set from observed cells and writes a binary PLY.

 # Safety
 `vol` is a live handle; `path` is a NUL-terminated UTF-8 string; the count
 outputs are null or writable.
 */
enum DfStatus df_mesh_save_ply(const struct DfVolume *vol,
                               float iso,
                               const char *path,
                               uint64_t *vertices,
                               uint64_t *faces);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHFUSE_H */
