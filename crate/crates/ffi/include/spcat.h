#ifndef SPCAT_H
#define SPCAT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpcatStatus {
  SPCAT_STATUS_OK = 0,
  SPCAT_STATUS_INVALID_ARGUMENT = 1,
  SPCAT_STATUS_IO = 2,
  SPCAT_STATUS_FORMAT = 3,
  SPCAT_STATUS_NUMERIC = 4,
  SPCAT_STATUS_NULL_POINTER = 5,
  SPCAT_STATUS_PANIC = 6,
} SpcatStatus;

typedef struct SpcatCodebook SpcatCodebook;

typedef struct SpcatModel SpcatModel;

/**
 * A lattice code split into two 64-bit halves.
 */
typedef struct SpcatCode {
  uint64_t lo;
  uint64_t hi;
} SpcatCode;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *spcat_last_error(void);

/**
 * Creates the codebook of integer points in `d` dimensions with squared norm `r2`.
 *
 * # Safety
 * `out` must point to writable storage for one handle.
 */
enum SpcatStatus spcat_codebook_new(size_t d, uint32_t r2, struct SpcatCodebook **out);

/**
 * # Safety
 * `cb` must be null or a handle from [`spcat_codebook_new`] not yet freed.
 */
void spcat_codebook_free(struct SpcatCodebook *cb);

/**
 * Code width in bits, 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live codebook handle.
 */
uint32_t spcat_codebook_bits(const struct SpcatCodebook *cb);

/**
 * Dimension, 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live codebook handle.
 */
size_t spcat_codebook_dim(const struct SpcatCodebook *cb);

/**
 * Number of points on the sphere.
 *
 * # Safety
 * `cb` must be a live codebook handle and `out` writable.
 */
enum SpcatStatus spcat_codebook_count(const struct SpcatCodebook *cb, struct SpcatCode *out);

/**
 * Nearest lattice points (by direction) of `n` row-major vectors: `points` receives `n * d` integers.
 *
 * # Safety
 * `x` holds `n * d` floats, `points` has room for `n * d` integers.
 */
enum SpcatStatus spcat_codebook_assign(const struct SpcatCodebook *cb,
                                       const float *x,
                                       size_t n,
                                       int32_t *points);

/**
 * Assigns and encodes `n` row-major vectors.
 *
 * # Safety
 * `x` holds `n * d` floats, `codes` has room for `n` codes.
 */
enum SpcatStatus spcat_codebook_encode(const struct SpcatCodebook *cb,
                                       const float *x,
                                       size_t n,
                                       struct SpcatCode *codes);

/**
 * Decodes `n` codes into `n * d` integer coordinates.
 *
 * # Safety
 * `codes` holds `n` codes, `points` has room for `n * d` integers.
 */
enum SpcatStatus spcat_codebook_decode(const struct SpcatCodebook *cb,
                                       const struct SpcatCode *codes,
                                       size_t n,
                                       int32_t *points);

/**
 * Squared distance between a unit query and the normalized point of `code`.
 *
 * # Safety
 * `query` holds `d` floats and `out` is writable.
 */
enum SpcatStatus spcat_codebook_distance(const struct SpcatCodebook *cb,
                                         const float *query,
                                         struct SpcatCode code,
                                         double *out);

/**
 * Exhaustive top-`k` search of `nq` queries over `n` codes; writes `nq * k` ids.
 *
 * # Safety
 * `queries` holds `nq * d` floats, `codes` holds `n` codes, `ids` has room for `nq * k` values.
 */
enum SpcatStatus spcat_codebook_search(const struct SpcatCodebook *cb,
                                       const float *queries,
                                       size_t nq,
                                       const struct SpcatCode *codes,
                                       size_t n,
                                       size_t k,
                                       uint64_t *ids);

/**
 * Sign bits of `n` row-major `d`-dimensional vectors; each row takes `ceil(d / 64)` words,
 * bit `j` of a row is set when coordinate `j` is non-negative.
 *
 * # Safety
 * `x` holds `n * d` floats, `words` has room for `n * ceil(d / 64)` values.
 */
enum SpcatStatus spcat_binarize(const float *x, size_t n, size_t d, uint64_t *words);

/**
 * Loads a checkpoint written by `spcat train`.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` writable.
 */
enum SpcatStatus spcat_model_load(const char *path, struct SpcatModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`spcat_model_load`] not yet freed.
 */
void spcat_model_free(struct SpcatModel *model);

/**
 * Input and output dimensions of a model.
 *
 * # Safety
 * `model` must be a live handle; `d_in` and `d_out` writable.
 */
enum SpcatStatus spcat_model_dims(const struct SpcatModel *model, size_t *d_in, size_t *d_out);

/**
 * Maps `n` row-major vectors onto the unit sphere of the output space.
 *
 * # Safety
 * `x` holds `n * d_in` floats and `y` has room for `n * d_out` floats.
 */
enum SpcatStatus spcat_model_transform(const struct SpcatModel *model,
                                       const float *x,
                                       size_t n,
                                       float *y);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPCAT_H */
