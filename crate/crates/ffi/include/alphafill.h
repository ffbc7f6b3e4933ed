#ifndef ALPHAFILL_H
#define ALPHAFILL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AfStatus {
  AF_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  AF_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or malformed.
   */
  AF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Reading or writing a file failed.
   */
  AF_STATUS_IO = 3,
  /**
   * The operation rejected its input (shape mismatch, untrained model, ...).
   */
  AF_STATUS_DOMAIN = 4,
  /**
   * An internal panic was caught.
   */
  AF_STATUS_PANIC = 5,
} AfStatus;

/**
 * Values of the `variant` argument of [`af_pad`].
 */
typedef enum AfPadding {
  AF_PADDING_CONTENT_EXTENSION = 0,
  AF_PADDING_TELEA = 1,
  AF_PADDING_TELEA_LOCALIZED = 2,
  AF_PADDING_GREY_BACKGROUND = 3,
} AfPadding;

/**
 * Values of the `strategy` argument of [`af_inpaint`].
 */
typedef enum AfStrategy {
  AF_STRATEGY_PURE_NOISE = 0,
  AF_STRATEGY_BLENDED_NOISE = 1,
} AfStrategy;

/**
 * A trained inpainting adapter.
 */
typedef struct AfAdapter AfAdapter;

/**
 * A trained edge-quality classifier.
 */
typedef struct AfClassifier AfClassifier;

/**
 * An RGBA image.
 */
typedef struct AfImage AfImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *af_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *af_version(void);

/**
 * Loads an 8- or 16-bit PNG.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AfStatus af_image_load(const char *path, struct AfImage **out);

/**
 * Builds an image from interleaved 8-bit RGBA bytes (`4 * width * height`).
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` be writable.
 */
enum AfStatus af_image_from_rgba8(size_t width,
                                  size_t height,
                                  const uint8_t *data,
                                  size_t len,
                                  struct AfImage **out);

/**
 * Writes the image as an 8-bit RGBA PNG.
 *
 * # Safety
 * `img` must be a live handle and `path` a NUL-terminated string.
 */
enum AfStatus af_image_save(const struct AfImage *img, const char *path);

/**
 * Width in pixels, or 0 for NULL.
 *
 * # Safety
 * `img` must be NULL or a live handle.
 */
size_t af_image_width(const struct AfImage *img);

/**
 * Height in pixels, or 0 for NULL.
 *
 * # Safety
 * `img` must be NULL or a live handle.
 */
size_t af_image_height(const struct AfImage *img);

/**
 * Copies the image as interleaved 8-bit RGBA into `buf`, which must hold
 * exactly `4 * width * height` bytes.
 *
 * # Safety
 * `img` must be a live handle and `buf` point to `len` writable bytes.
 */
enum AfStatus af_image_to_rgba8(const struct AfImage *img, uint8_t *buf, size_t len);

/**
 * # Safety
 * `img` must be NULL or a handle not freed before.
 */
void af_image_free(struct AfImage *img);

/**
 * Composites over an opaque background; the result is opaque.
 *
 * # Safety
 * `img` must be a live handle and `out` writable.
 */
enum AfStatus af_composite_over(const struct AfImage *img,
                                double r,
                                double g,
                                double b,
                                struct AfImage **out);

/**
 * Replaces the RGB of pixels with alpha below `alpha_threshold`.
 *
 * # Safety
 * `img` must be a live handle and `out` writable.
 */
enum AfStatus af_pad(const struct AfImage *img,
                     uint32_t variant,
                     double alpha_threshold,
                     size_t expansion,
                     struct AfImage **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AfStatus af_classifier_load(const char *path, struct AfClassifier **out);

/**
 * # Safety
 * `clf` must be NULL or a handle not freed before.
 */
void af_classifier_free(struct AfClassifier *clf);

/**
 * Alpha edge quality of `img` in `[0, 1]`. `mask` holds one byte per pixel
 * (nonzero = inpainted) or is NULL to score the whole image.
 *
 * # Safety
 * Handles must be live, `mask` NULL or `mask_len` readable bytes, and
 * `score` writable.
 */
enum AfStatus af_aeq_score(const struct AfImage *img,
                           const struct AfClassifier *clf,
                           const uint8_t *mask,
                           size_t mask_len,
                           double *score);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AfStatus af_adapter_load(const char *path, struct AfAdapter **out);

/**
 * # Safety
 * `model` must be NULL or a handle not freed before.
 */
void af_adapter_free(struct AfAdapter *model);

/**
 * Inpaints `img` inside `mask` (one byte per pixel, nonzero = inpaint).
 * `strength` is used by the blended strategy only and must lie in `[0, 1]`.
 *
 * # Safety
 * Handles must be live, `mask` point to `mask_len` bytes, `prompt` be a
 * NUL-terminated string and `out` writable.
 */
enum AfStatus af_inpaint(const struct AfAdapter *model,
                         const struct AfImage *img,
                         const uint8_t *mask,
                         size_t mask_len,
                         const char *prompt,
                         uint32_t strategy,
                         double strength,
                         size_t steps,
                         uint64_t seed,
                         struct AfImage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALPHAFILL_H */
