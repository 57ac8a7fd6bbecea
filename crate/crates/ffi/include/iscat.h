#ifndef ISCAT_H
#define ISCAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum IscatStatus {
  ISCAT_STATUS_OK = 0,
  ISCAT_STATUS_NULL_POINTER = 1,
  ISCAT_STATUS_INVALID_ARGUMENT = 2,
  ISCAT_STATUS_SHAPE_MISMATCH = 3,
  ISCAT_STATUS_NUMERIC = 4,
  ISCAT_STATUS_CONFIG = 5,
  ISCAT_STATUS_IO = 6,
  ISCAT_STATUS_FORMAT = 7,
  ISCAT_STATUS_PANIC = 8,
} IscatStatus;

/**
 * Loss selector for [`iscat_loss`].
 */
typedef enum IscatLossKind {
  ISCAT_LOSS_KIND_CONTRAST = 0,
  ISCAT_LOSS_KIND_CURRENT = 1,
  ISCAT_LOSS_KIND_FIELD = 2,
} IscatLossKind;

/**
 * Scene geometry, Green's operators and incident fields.
 */
typedef struct IscatScene IscatScene;

/**
 * Borrowed view of one training sample. Field buffers hold `n_tx * n_pixels` values.
 */
typedef struct IscatSampleView {
  const double *chi_true_re;
  const double *chi_true_im;
  const double *current_re;
  const double *current_im;
  const double *total_re;
  const double *total_im;
  const double *scattered_re;
  const double *scattered_im;
} IscatSampleView;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length, or 0 if
 * the last call succeeded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t iscat_last_error(char *buf, size_t len);

/**
 * Builds a square DOI of `nx * ny` cells and side `side_wavelengths`, with
 * `n_tx` sources and `n_rx` receivers on a circle of `radius_wavelengths`.
 *
 * # Safety
 * `out` must be valid for writing one pointer. Release the handle with
 * [`iscat_scene_free`].
 */
enum IscatStatus iscat_scene_new(size_t nx,
                                 size_t ny,
                                 double side_wavelengths,
                                 double lambda0,
                                 size_t n_tx,
                                 size_t n_rx,
                                 double radius_wavelengths,
                                 struct IscatScene **out);

/**
 * # Safety
 * `scene` must be null or a handle from [`iscat_scene_new`] not yet freed.
 */
void iscat_scene_free(struct IscatScene *scene);

/**
 * Reports the grid size and antenna counts of a scene.
 *
 * # Safety
 * `scene` must be a live handle; the outputs must be valid for writing.
 */
enum IscatStatus iscat_scene_dims(const struct IscatScene *scene,
                                  size_t *nx,
                                  size_t *ny,
                                  size_t *n_tx,
                                  size_t *n_rx);

/**
 * Solves the forward problem for contrast `chi` (`ny * nx`) and writes the
 * receiver fields (`n_tx * n_rx`).
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum IscatStatus iscat_forward(const struct IscatScene *scene,
                               const double *chi_re,
                               const double *chi_im,
                               size_t n_pixels,
                               double *out_re,
                               double *out_im,
                               size_t n_out);

/**
 * Back-propagation estimate from receiver fields (`n_tx * n_rx`).
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum IscatStatus iscat_back_projection(const struct IscatScene *scene,
                                       const double *mea_re,
                                       const double *mea_im,
                                       size_t n_mea,
                                       double *out_re,
                                       double *out_im,
                                       size_t n_pixels);

/**
 * Pixel-mean squared magnitude of `a - b` for `height * width` maps.
 *
 * # Safety
 * Buffers must be valid for `height * width` values.
 */
enum IscatStatus iscat_mse(const double *a_re,
                           const double *a_im,
                           const double *b_re,
                           const double *b_im,
                           size_t height,
                           size_t width,
                           double *out);

/**
 * Gaussian-window SSIM of two real `height * width` images.
 *
 * # Safety
 * Buffers must be valid for `height * width` values.
 */
enum IscatStatus iscat_ssim(const double *a,
                            const double *b,
                            size_t height,
                            size_t width,
                            double dynamic_range,
                            double *out);

/**
 * Loss value and its gradient with respect to the real and imaginary parts
 * of `chi_hat`. A negative `beta` uses the single-sample batch value.
 *
 * # Safety
 * Pixel buffers hold `ny * nx` values and field buffers `n_tx * ny * nx`.
 */
enum IscatStatus iscat_loss(const struct IscatScene *scene,
                            enum IscatLossKind kind,
                            const double *chi_hat_re,
                            const double *chi_hat_im,
                            const struct IscatSampleView *sample,
                            double beta,
                            double *value,
                            double *grad_re,
                            double *grad_im);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISCAT_H */
