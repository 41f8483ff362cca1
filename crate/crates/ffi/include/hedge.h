#ifndef HEDGE_H
#define HEDGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HedgeStatus {
  HEDGE_STATUS_OK = 0,
  HEDGE_STATUS_NULL_POINTER = 1,
  HEDGE_STATUS_INVALID_ARGUMENT = 2,
  HEDGE_STATUS_IO = 3,
  HEDGE_STATUS_SHAPE = 4,
  HEDGE_STATUS_NUMERIC = 5,
  HEDGE_STATUS_PANIC = 6,
} HedgeStatus;

/**
 * A batch of incidence matrices.
 */
typedef struct HedgeBatch HedgeBatch;

/**
 * A binary incidence matrix.
 */
typedef struct HedgeIncidence HedgeIncidence;

/**
 * A trained drift network with its diffusion settings.
 */
typedef struct HedgeModel HedgeModel;

/**
 * The ten distances of a metric report plus the spectral truncation used.
 */
typedef struct HedgeMetrics {
  double delta_rho;
  double delta_k;
  double delta_e;
  double w1_degree;
  double w1_size;
  double node_spec_wd;
  double edge_spec_wd;
  double tail_gap;
  double intersection_wd;
  double feature_mmd;
  size_t truncation;
} HedgeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 */
const char *hedge_last_error(void);

/**
 * Library version as a static string.
 */
const char *hedge_version(void);

/**
 * Builds an `n x m` incidence from row-major 0/1 bytes. Isolated nodes are
 * allowed; empty hyperedges are rejected.
 */
enum HedgeStatus hedge_incidence_new(size_t n,
                                     size_t m,
                                     const uint8_t *data,
                                     struct HedgeIncidence **out);

/**
 * Reads the text incidence format.
 */
enum HedgeStatus hedge_incidence_load(const char *path, struct HedgeIncidence **out);

enum HedgeStatus hedge_incidence_shape(const struct HedgeIncidence *h, size_t *n, size_t *m);

/**
 * Copies the row-major entries into `buf`, which must hold `n * m` bytes.
 */
enum HedgeStatus hedge_incidence_copy(const struct HedgeIncidence *h, uint8_t *buf, size_t len);

void hedge_incidence_free(struct HedgeIncidence *h);

/**
 * Reads every matrix of a batch directory.
 */
enum HedgeStatus hedge_batch_load_dir(const char *path, struct HedgeBatch **out);

enum HedgeStatus hedge_batch_len(const struct HedgeBatch *b, size_t *len);

/**
 * A new handle holding a copy of element `i`.
 */
enum HedgeStatus hedge_batch_get(const struct HedgeBatch *b, size_t i, struct HedgeIncidence **out);

void hedge_batch_free(struct HedgeBatch *b);

/**
 * Loads a model directory written by `hedge train`.
 */
enum HedgeStatus hedge_model_load(const char *dir, struct HedgeModel **out);

/**
 * Draws `count` projected samples with `steps` reverse steps.
 */
enum HedgeStatus hedge_model_generate(const struct HedgeModel *model,
                                      size_t count,
                                      size_t steps,
                                      uint64_t seed,
                                      double threshold,
                                      struct HedgeBatch **out);

void hedge_model_free(struct HedgeModel *m);

enum HedgeStatus hedge_evaluate(const struct HedgeBatch *real,
                                const struct HedgeBatch *generated,
                                struct HedgeMetrics *out);

/**
 * Runs the validation suite; `passed` receives 1 if every check passed.
 */
enum HedgeStatus hedge_validate(uint64_t seed, bool quick, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEDGE_H */
