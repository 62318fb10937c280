#ifndef VFIKIT_H
#define VFIKIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Source of the motion coefficients.
 */
typedef enum VfiMode {
  VFI_MODE_LEARNED = 0,
  VFI_MODE_ANALYTIC_BASELINE = 1,
  VFI_MODE_GT_COEFFS = 2,
} VfiMode;

/**
 * Result of every call.
 */
typedef enum VfiStatus {
  VFI_STATUS_OK = 0,
  VFI_STATUS_NULL_POINTER = 1,
  VFI_STATUS_INVALID_ARGUMENT = 2,
  VFI_STATUS_DIMENSION = 3,
  VFI_STATUS_CONTRACT = 4,
  VFI_STATUS_FORMAT = 5,
  VFI_STATUS_IO = 6,
  VFI_STATUS_NON_FINITE = 7,
  VFI_STATUS_PANIC = 8,
} VfiStatus;

/**
 * A configured interpolator.
 */
typedef struct VfiPipeline VfiPipeline;

/**
 * Four frames with their flows and occlusion maps.
 */
typedef struct VfiQuad VfiQuad;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call on the same thread.
 */
const char *vfi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vfi_version(void);

/**
 * Creates a pipeline with default settings. Learned mode starts from
 * freshly initialised weights.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum VfiStatus vfi_pipeline_new(enum VfiMode mode, struct VfiPipeline **out);

/**
 * Restores a pipeline from a checkpoint file and switches it to `mode`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer
 * write.
 */
enum VfiStatus vfi_pipeline_load(const char *path, enum VfiMode mode, struct VfiPipeline **out);

/**
 * # Safety
 * `p` must be null or a handle from `vfi_pipeline_new`/`vfi_pipeline_load`
 * that has not been freed.
 */
void vfi_pipeline_free(struct VfiPipeline *p);

/**
 * Generates synthetic scene `index` of the dataset named by a difficulty
 * preset (`linear`, `moderate`, `occlusion`, `quadratic`), `seed` and
 * `size`, the same quad `make_dataset` produces at that index.
 *
 * # Safety
 * `difficulty` must be a NUL-terminated string and `out` valid for a
 * pointer write.
 */
enum VfiStatus vfi_quad_synthetic(const char *difficulty,
                                  uint64_t seed,
                                  size_t index,
                                  size_t size,
                                  struct VfiQuad **out);

/**
 * Loads row `row` (0-based) of a dataset manifest.
 *
 * # Safety
 * `manifest` must be a NUL-terminated string and `out` valid for a pointer
 * write.
 */
enum VfiStatus vfi_quad_load(const char *manifest, size_t row, struct VfiQuad **out);

/**
 * Width, height and target time of a quad. Any output pointer may be null.
 *
 * # Safety
 * `q` must be a live quad handle; non-null outputs must be writable.
 */
enum VfiStatus vfi_quad_info(const struct VfiQuad *q, size_t *width, size_t *height, double *t);

/**
 * Copies the quad's ground-truth frame into `out` (`3 * width * height`
 * floats).
 *
 * # Safety
 * `q` must be a live quad handle and `out` writable for `len` floats.
 */
enum VfiStatus vfi_quad_target(const struct VfiQuad *q, float *out, size_t len);

/**
 * # Safety
 * `q` must be null or a live quad handle.
 */
void vfi_quad_free(struct VfiQuad *q);

/**
 * Interpolates the frame at `t` into `out` (`3 * width * height` floats,
 * planar RGB).
 *
 * # Safety
 * `p` and `q` must be live handles and `out` writable for `len` floats.
 */
enum VfiStatus vfi_interpolate(const struct VfiPipeline *p,
                               const struct VfiQuad *q,
                               double t,
                               float *out,
                               size_t len);

/**
 * Reverses a forward flow of `width * height` vectors into `out` by
 * Gaussian-weighted splatting. `holes`, when non-null, receives one byte
 * per pixel: 1 where nothing landed.
 *
 * # Safety
 * `flow` must be readable and `out` writable for `2 * width * height`
 * floats; a non-null `holes` must be writable for `width * height` bytes.
 */
enum VfiStatus vfi_reverse_flow(const float *flow,
                                size_t width,
                                size_t height,
                                float *out,
                                uint8_t *holes);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VFIKIT_H */
