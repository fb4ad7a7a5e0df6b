#ifndef CRFN_H
#define CRFN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define CRFN_OK 0

#define CRFN_ERR_NULL 1

#define CRFN_ERR_INVALID 2

#define CRFN_ERR_IO 3

#define CRFN_ERR_NUMERIC 4

#define CRFN_ERR_STATE 5

#define CRFN_ERR_BUFFER 6

#define CRFN_ERR_PANIC 7

/**
 * Environment with one active episode.
 */
typedef struct CrfnEnv CrfnEnv;

/**
 * Trained policy with its recurrent state.
 */
typedef struct CrfnPolicy CrfnPolicy;

/**
 * Episode parameters. Headings: 0 = N, 1 = E, 2 = S, 3 = W.
 */
typedef struct CrfnEpisodeDesc {
  int32_t start_x;
  int32_t start_y;
  uint32_t start_heading;
  int32_t goal_x;
  int32_t goal_y;
  uint32_t max_steps;
  double noise_std;
  uint64_t seed;
} CrfnEpisodeDesc;

typedef struct CrfnStepResult {
  double reward;
  double geodesic_distance;
  bool done;
  bool success;
  bool collided;
} CrfnStepResult;

typedef struct CrfnEpisodeRecord {
  bool success;
  double geodesic_len;
  double path_len;
  uint32_t action_count;
} CrfnEpisodeRecord;

typedef struct CrfnMetrics {
  double sr;
  double spl;
  double sna;
} CrfnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after success.
 * Valid until the next call on the same thread.
 */
const char *crfn_last_error(void);

/**
 * Creates an environment from an ASCII map ('#' blocked; '.', 'S', 'G'
 * free) and a sound spectrum of `bins` values, and starts the episode.
 *
 * # Safety
 * `map_ascii` must be a NUL-terminated string, `spectrum` must point to
 * `bins` readable doubles, `desc` and `out` must be valid pointers.
 */
int32_t crfn_env_new(const char *map_ascii,
                     const struct CrfnEpisodeDesc *desc,
                     const double *spectrum,
                     size_t bins,
                     struct CrfnEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from `crfn_env_new` not yet freed.
 */
void crfn_env_free(struct CrfnEnv *env);

/**
 * Lengths of the visual vector and of one audio channel.
 *
 * # Safety
 * All pointers must be valid.
 */
int32_t crfn_env_sizes(const struct CrfnEnv *env, size_t *visual_len, size_t *audio_bins);

/**
 * Copies the current observation: ray depths into `visual`, then the
 * left channel followed by the right channel into `audio`.
 *
 * # Safety
 * `visual` and `audio` must hold `visual_cap` and `audio_cap` doubles.
 */
int32_t crfn_env_observe(const struct CrfnEnv *env,
                         double *visual,
                         size_t visual_cap,
                         double *audio,
                         size_t audio_cap);

/**
 * Applies an action: 0 Forward, 1 TurnLeft, 2 TurnRight, 3 Stop.
 *
 * # Safety
 * `env` must be a live handle and `result` null or valid.
 */
int32_t crfn_env_step(struct CrfnEnv *env, uint32_t action, struct CrfnStepResult *result);

/**
 * Episode accounting so far.
 *
 * # Safety
 * `env` and `record` must be valid pointers.
 */
int32_t crfn_env_record(const struct CrfnEnv *env, struct CrfnEpisodeRecord *record);

/**
 * Loads a policy checkpoint written by `crfn train`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
int32_t crfn_policy_load(const char *path, struct CrfnPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle from `crfn_policy_load` not yet freed.
 */
void crfn_policy_free(struct CrfnPolicy *policy);

/**
 * Clears the recurrent state; call at the start of every episode.
 *
 * # Safety
 * `policy` must be a live handle.
 */
int32_t crfn_policy_reset(struct CrfnPolicy *policy);

/**
 * Greedy action for the environment's current observation. Advances the
 * policy's recurrent state but not the environment.
 *
 * # Safety
 * Handles must be live and `action` valid.
 */
int32_t crfn_policy_act(struct CrfnPolicy *policy, const struct CrfnEnv *env, uint32_t *action);

/**
 * Current fusion weights. Fails with `CRFN_ERR_INVALID` for variants
 * without them.
 *
 * # Safety
 * All pointers must be valid.
 */
int32_t crfn_policy_betas(const struct CrfnPolicy *policy, double *beta_v, double *beta_a);

/**
 * SR, SPL and SNA as fractions over `n` records.
 *
 * # Safety
 * `records` must point to `n` records and `out` must be valid.
 */
int32_t crfn_metrics(const struct CrfnEpisodeRecord *records, size_t n, struct CrfnMetrics *out);

/**
 * Geodesic (BFS) distance between two cells, or -1 when unreachable.
 *
 * # Safety
 * `map_ascii` must be NUL-terminated and `distance` valid.
 */
int32_t crfn_geodesic(const char *map_ascii,
                      int32_t from_x,
                      int32_t from_y,
                      int32_t to_x,
                      int32_t to_y,
                      int64_t *distance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRFN_H */
