#ifndef REID_LSTM_H
#define REID_LSTM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ReidStatus {
  REID_STATUS_OK = 0,
  REID_STATUS_NULL_POINTER = 1,
  REID_STATUS_INVALID_ARGUMENT = 2,
  REID_STATUS_IO = 3,
  REID_STATUS_FORMAT = 4,
  REID_STATUS_DIMENSION = 5,
  REID_STATUS_NUMERICAL = 6,
  REID_STATUS_BUFFER_TOO_SMALL = 7,
} ReidStatus;

/**
 * Feature set loaded from a manifest.
 */
typedef struct ReidFeatureSet ReidFeatureSet;

/**
 * Loaded siamese model.
 */
typedef struct ReidModel ReidModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null.
 *
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *reid_last_error(void);

/**
 * Loads a model file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ReidStatus reid_model_load(const char *path, struct ReidModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`reid_model_load`] and not be used afterwards.
 */
void reid_model_free(struct ReidModel *model);

/**
 * Writes rows `R`, input width `d`, hidden size `n` and embedding length.
 *
 * # Safety
 * `model` must be a live handle; each out pointer may be null.
 */
enum ReidStatus reid_model_dims(const struct ReidModel *model,
                                size_t *rows,
                                size_t *input_dim,
                                size_t *hidden_dim,
                                size_t *embedding_dim);

/**
 * Embeds one image given as `rows × input_dim` values, row-major.
 *
 * `out` must hold `out_len >= embedding_dim` values.
 *
 * # Safety
 * `features` must point to `len` readable doubles and `out` to `out_len`
 * writable doubles.
 */
enum ReidStatus reid_model_embed(const struct ReidModel *model,
                                 const double *features,
                                 size_t len,
                                 double *out,
                                 size_t out_len);

/**
 * Euclidean distance between two embeddings of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles, `out` to one writable double.
 */
enum ReidStatus reid_distance(const double *a, const double *b, size_t len, double *out);

/**
 * Contrastive loss for a pair at distance `dist`; `label` is 0 for the same
 * person and 1 for different people.
 *
 * # Safety
 * `out` must point to one writable double.
 */
enum ReidStatus reid_contrastive_loss(double dist, uint8_t label, double margin, double *out);

/**
 * Loads feature set `name` listed in the manifest at `manifest`.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be a valid pointer.
 */
enum ReidStatus reid_features_load(const char *manifest,
                                   const char *name,
                                   struct ReidFeatureSet **out);

/**
 * Releases a feature set. Null is ignored.
 *
 * # Safety
 * `set` must come from [`reid_features_load`] and not be used afterwards.
 */
void reid_features_free(struct ReidFeatureSet *set);

/**
 * Writes item count, rows `R` and row width `d`.
 *
 * # Safety
 * `set` must be a live handle; each out pointer may be null.
 */
enum ReidStatus reid_features_dims(const struct ReidFeatureSet *set,
                                   size_t *count,
                                   size_t *rows,
                                   size_t *dim);

/**
 * Copies item `index` (`R × d` values, row-major) into `out` and its
 * identity and camera into the optional out pointers.
 *
 * # Safety
 * `set` must be a live handle and `out` must hold `out_len` doubles.
 */
enum ReidStatus reid_features_item(const struct ReidFeatureSet *set,
                                   size_t index,
                                   double *out,
                                   size_t out_len,
                                   uint32_t *identity,
                                   uint32_t *camera);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REID_LSTM_H */
