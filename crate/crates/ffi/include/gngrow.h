#ifndef GNGROW_H
#define GNGROW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum GngrowStatus {
  GNGROW_STATUS_OK = 0,
  GNGROW_STATUS_NULL_POINTER = 1,
  GNGROW_STATUS_INVALID_ARGUMENT = 2,
  GNGROW_STATUS_IO = 3,
  GNGROW_STATUS_FORMAT = 4,
  GNGROW_STATUS_SHAPE = 5,
  GNGROW_STATUS_NUMERIC = 6,
  GNGROW_STATUS_CONFIG = 7,
  GNGROW_STATUS_INVARIANT = 8,
  GNGROW_STATUS_INDEX = 9,
  GNGROW_STATUS_PANIC = 10,
} GngrowStatus;

/**
 * A loaded network. Create with [`gngrow_network_load`], release with
 * [`gngrow_network_free`].
 */
typedef struct GngrowNetwork GngrowNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *gngrow_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gngrow_version(void);

/**
 * Loads a checkpoint written by the `grow` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum GngrowStatus gngrow_network_load(const char *path, struct GngrowNetwork **out);

/**
 * Writes the network to a checkpoint file.
 *
 * # Safety
 * `net` must come from [`gngrow_network_load`]; `path` must be NUL-terminated.
 */
enum GngrowStatus gngrow_network_save(const struct GngrowNetwork *net, const char *path);

/**
 * Releases a network. Null is accepted and ignored.
 *
 * # Safety
 * `net` must come from [`gngrow_network_load`] and not be used afterwards.
 */
void gngrow_network_free(struct GngrowNetwork *net);

/**
 * Number of learnable parameters.
 *
 * # Safety
 * `net` must be a live handle and `out` writable.
 */
enum GngrowStatus gngrow_network_param_count(const struct GngrowNetwork *net, size_t *out);

/**
 * Number of convolutional layers.
 *
 * # Safety
 * `net` must be a live handle and `out` writable.
 */
enum GngrowStatus gngrow_network_num_layers(const struct GngrowNetwork *net, size_t *out);

/**
 * Output channels of convolutional layer `layer`.
 *
 * # Safety
 * `net` must be a live handle and `out` writable.
 */
enum GngrowStatus gngrow_network_layer_width(const struct GngrowNetwork *net,
                                             size_t layer,
                                             size_t *out);

/**
 * Input shape as `(channels, height, width)` and the class count.
 *
 * # Safety
 * `net` must be a live handle; `shape_out` must hold 3 values and
 * `classes_out` must be writable.
 */
enum GngrowStatus gngrow_network_shape(const struct GngrowNetwork *net,
                                       size_t *shape_out,
                                       size_t *classes_out);

/**
 * Eval-mode class probabilities for `n` images stored contiguously as
 * `n × C × H × W` doubles. `probs_out` receives `n × classes` values.
 *
 * # Safety
 * `images` must hold `images_len` doubles and `probs_out` must hold
 * `probs_len` doubles.
 */
enum GngrowStatus gngrow_network_predict(const struct GngrowNetwork *net,
                                         const double *images,
                                         size_t images_len,
                                         size_t n,
                                         double *probs_out,
                                         size_t probs_len);

/**
 * Runs a CLI command (`grow`, `verify-gn`, `compare` or `retrain`) with a
 * config file, writing its outputs under `out_dir`.
 *
 * # Safety
 * All three strings must be NUL-terminated.
 */
enum GngrowStatus gngrow_run_command(const char *command,
                                     const char *config_path,
                                     const char *out_dir);

/**
 * Loss-change estimate for a batch of `samples` rows of `dim` values:
 * `(1/S) Σ_s (d_s + d_s²/(4 loss))` with `d_s = ⟨Δz_s, g_s⟩`.
 *
 * # Safety
 * `delta_z` and `g` must each hold `samples × dim` doubles; `out` must be
 * writable.
 */
enum GngrowStatus gngrow_gn_estimate(const double *delta_z,
                                     const double *g,
                                     size_t samples,
                                     size_t dim,
                                     double loss,
                                     double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* GNGROW_H */
