#ifndef HDRF_H
#define HDRF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum HdrfStatus {
  HDRF_STATUS_OK = 0,
  HDRF_STATUS_NULL_POINTER = 1,
  HDRF_STATUS_INVALID_ARGUMENT = 2,
  HDRF_STATUS_IO = 3,
  HDRF_STATUS_FORMAT = 4,
  HDRF_STATUS_NUMERIC = 5,
  HDRF_STATUS_BUFFER_TOO_SMALL = 6,
  HDRF_STATUS_PANIC = 7,
  HDRF_STATUS_INTERNAL = 8,
} HdrfStatus;

// A loaded checkpoint. Create with `hdrf_model_load`, release with
// `hdrf_model_free`. A handle may be shared across threads for rendering.
typedef struct HdrfModel HdrfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a checkpoint written by `hdrf train`. On success `*out` owns a new
// handle; on failure it is set to null.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
enum HdrfStatus hdrf_model_load(const char *path, struct HdrfModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from `hdrf_model_load` and not be used afterwards.
void hdrf_model_free(struct HdrfModel *model);

// Image size the checkpoint renders at.
//
// # Safety
// `model` must be a live handle; `width` and `height` valid pointers.
enum HdrfStatus hdrf_model_image_size(const struct HdrfModel *model, size_t *width, size_t *height);

// Renders the LDR view seen from a 4x4 row-major camera-to-world matrix at
// `exposure_s` seconds. Colors lie in [0, 1].
//
// # Safety
// `c2w` must point to 16 doubles and `out` to `out_len` doubles.
enum HdrfStatus hdrf_render_ldr(const struct HdrfModel *model,
                                const double *c2w,
                                double exposure_s,
                                double *out,
                                size_t out_len);

// Renders linear HDR radiance from a camera-to-world matrix.
//
// # Safety
// As for `hdrf_render_ldr`.
enum HdrfStatus hdrf_render_hdr(const struct HdrfModel *model,
                                const double *c2w,
                                double *out,
                                size_t out_len);

// Evaluates the learned response at `n` log exposures, writing `3 * n`
// interleaved RGB colors.
//
// # Safety
// `log_exposure` must point to `n` doubles and `out` to `out_len` doubles.
enum HdrfStatus hdrf_export_crf(const struct HdrfModel *model,
                                const double *log_exposure,
                                size_t n,
                                double *out,
                                size_t out_len);

// Mu-law tone map of a value in [0, 1] with the given mu.
//
// # Safety
// `out` must be a valid pointer.
enum HdrfStatus hdrf_mu_law(double x, double mu, double *out);

// PSNR in dB between two RGB images of the same size; identical images
// give +infinity.
//
// # Safety
// `a` and `b` must each point to `3 * width * height` doubles; `out` must
// be a valid pointer.
enum HdrfStatus hdrf_psnr(const double *a,
                          const double *b,
                          size_t width,
                          size_t height,
                          double peak,
                          double *out);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`) and returns the full message
// length in bytes, excluding the terminator. Zero means no error.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null with `len == 0`.
size_t hdrf_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *hdrf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDRF_H */
