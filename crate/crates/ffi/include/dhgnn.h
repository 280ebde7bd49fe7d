#ifndef DHGNN_H
#define DHGNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. The nonzero values below 4 match the CLI exit codes.
 */
typedef enum DhgnnStatus {
  DHGNN_STATUS_OK = 0,
  /**
   * A verification (gradient check) did not pass.
   */
  DHGNN_STATUS_VERIFICATION = 1,
  /**
   * Malformed data, configuration, dimensions, or checkpoint.
   */
  DHGNN_STATUS_INPUT = 2,
  /**
   * A loss or gradient became non-finite.
   */
  DHGNN_STATUS_NUMERICAL = 3,
  /**
   * Null pointer, invalid UTF-8, or out-of-range enum value.
   */
  DHGNN_STATUS_INVALID_ARGUMENT = 4,
  /**
   * The library panicked; the handle arguments should be considered unusable.
   */
  DHGNN_STATUS_PANIC = 5,
} DhgnnStatus;

/**
 * Node mask selector for [`dhgnn_model_evaluate`].
 */
typedef enum DhgnnMask {
  DHGNN_MASK_TRAIN = 0,
  DHGNN_MASK_VAL = 1,
  DHGNN_MASK_TEST = 2,
} DhgnnMask;

/**
 * A labelled directed graph with node features and optional splits.
 */
typedef struct DhgnnDataset DhgnnDataset;

/**
 * A trained network and the graph orientation it was trained on.
 */
typedef struct DhgnnModel DhgnnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dhgnn_version(void);

/**
 * Message of the last failing call on this thread, or null if none has failed.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *dhgnn_last_error(void);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library that has not been freed.
 */
void dhgnn_string_free(char *s);

/**
 * Loads a dataset directory (`edges.tsv`, `features.tsv`, `labels.tsv`, optional `splits.json`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum DhgnnStatus dhgnn_dataset_load(const char *path, struct DhgnnDataset **out);

/**
 * Builds a dataset from arrays: `features` is row-major `num_nodes x num_features`,
 * `labels` has `num_nodes` entries, and edge `i` runs from `src[i]` to `dst[i]`.
 * The dataset starts without splits.
 *
 * # Safety
 * Each array must hold the stated number of elements; `out` must be valid for writes.
 */
enum DhgnnStatus dhgnn_dataset_from_arrays(size_t num_nodes,
                                           size_t num_features,
                                           const double *features,
                                           const size_t *labels,
                                           const size_t *src,
                                           const size_t *dst,
                                           size_t num_edges,
                                           struct DhgnnDataset **out);

/**
 * Replaces the dataset's splits with `count` stratified 48/32/20 splits drawn from `seed`.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
enum DhgnnStatus dhgnn_dataset_generate_splits(struct DhgnnDataset *ds,
                                               size_t count,
                                               uint64_t seed);

/**
 * Releases a dataset handle. Null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle from this library that has not been freed.
 */
void dhgnn_dataset_free(struct DhgnnDataset *ds);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t dhgnn_dataset_num_nodes(const struct DhgnnDataset *ds);

/**
 * Distinct edge count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t dhgnn_dataset_num_edges(const struct DhgnnDataset *ds);

/**
 * Split count, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t dhgnn_dataset_num_splits(const struct DhgnnDataset *ds);

/**
 * Fraction of edges joining same-label nodes; NaN when the graph has no edges.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` must be valid for writes.
 */
enum DhgnnStatus dhgnn_edge_homophily(const struct DhgnnDataset *ds, double *out);

/**
 * Full diagnostics report (hop curves, edge homophily, class matrices) as JSON.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out_json` must be valid for writes.
 * The string is freed with [`dhgnn_string_free`].
 */
enum DhgnnStatus dhgnn_analyze_json(const struct DhgnnDataset *ds,
                                    size_t max_hops,
                                    char **out_json);

/**
 * Trains node classification on one split with a JSON configuration.
 *
 * On success `*out_model` receives the best-validation network and, if
 * non-null, `*out_test_acc` its test accuracy.
 *
 * # Safety
 * `ds` must be a live dataset handle, `config_json` a NUL-terminated string,
 * `out_model` valid for writes, and `out_test_acc` null or valid for writes.
 */
enum DhgnnStatus dhgnn_train_split(const struct DhgnnDataset *ds,
                                   const char *config_json,
                                   size_t split,
                                   struct DhgnnModel **out_model,
                                   double *out_test_acc);

/**
 * Accuracy of `model` on one mask (a [`DhgnnMask`] value) of split `split`.
 *
 * # Safety
 * `model` and `ds` must be live handles; `out_acc` must be valid for writes.
 */
enum DhgnnStatus dhgnn_model_evaluate(const struct DhgnnModel *model,
                                      const struct DhgnnDataset *ds,
                                      size_t split,
                                      uint32_t mask,
                                      double *out_acc);

/**
 * Writes a checkpoint readable by the `dhgnn` CLI.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum DhgnnStatus dhgnn_model_save(const struct DhgnnModel *model, const char *path);

/**
 * Reads a checkpoint written by [`dhgnn_model_save`] or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum DhgnnStatus dhgnn_model_load(const char *path, struct DhgnnModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library that has not been freed.
 */
void dhgnn_model_free(struct DhgnnModel *model);

/**
 * Finite-difference check of every parameter gradient on a random `size`-node instance.
 *
 * Returns `Ok` when all entries are within `tol` and the stop-gradient checks hold,
 * `Verification` otherwise. `out_max_error`, if non-null, receives the worst relative error.
 *
 * # Safety
 * `out_max_error` must be null or valid for writes.
 */
enum DhgnnStatus dhgnn_gradcheck(size_t size, double tol, uint64_t seed, double *out_max_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DHGNN_H */
