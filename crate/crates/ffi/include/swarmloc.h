#ifndef SWARMLOC_H
#define SWARMLOC_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Learning-rate rule selector for [`swl_pair_new`].
typedef enum SwlLearningRate {
  SWL_LEARNING_RATE_NOMINAL = 0,
  SWL_LEARNING_RATE_SQUARED = 1,
} SwlLearningRate;

// What [`swl_pair_push`] did with a measurement.
typedef enum SwlPushOutcome {
  // First measurement; only stored as the start of the next interval.
  SWL_PUSH_OUTCOME_STARTED = 0,
  // Added to the record while below capacity.
  SWL_PUSH_OUTCOME_APPENDED = 1,
  // Replaced a recorded sample.
  SWL_PUSH_OUTCOME_REPLACED = 2,
  // Used for one update but not recorded.
  SWL_PUSH_OUTCOME_DISCARDED = 3,
  // The regressor vanished (no relative motion); nothing was updated.
  SWL_PUSH_OUTCOME_REJECTED = 4,
} SwlPushOutcome;

// Result of every fallible call.
typedef enum SwlStatus {
  SWL_STATUS_OK = 0,
  SWL_STATUS_NULL_POINTER = 1,
  SWL_STATUS_INVALID_ARGUMENT = 2,
  // The estimator has no recorded data yet.
  SWL_STATUS_NOT_READY = 3,
  // The yaw components of the estimate are both zero.
  SWL_STATUS_DEGENERATE = 4,
  SWL_STATUS_CONFIG = 5,
  SWL_STATUS_RUN = 6,
  SWL_STATUS_IO = 7,
  SWL_STATUS_PANIC = 8,
} SwlStatus;

// Outlier screen for one ranging pair.
typedef struct SwlJudgeQueue SwlJudgeQueue;

// Pairwise relative-pose estimator fed with raw ranges and odometry.
typedef struct SwlPairEstimator SwlPairEstimator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *swl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *swl_version(void);

// Creates an estimator keeping at most `hist_cap` recorded samples.
// `planar` non-zero excludes the vertical offset from the excitation test.
//
// # Safety
// `out` must be valid for writing one pointer.
enum SwlStatus swl_pair_new(uint32_t hist_cap,
                            int planar,
                            enum SwlLearningRate rate,
                            struct SwlPairEstimator **out);

// Releases an estimator. Null is ignored.
//
// # Safety
// `h` must come from [`swl_pair_new`] and not be used afterwards.
void swl_pair_free(struct SwlPairEstimator *h);

// Feeds one range `d` together with the cumulative odometry of the owning
// robot (`own_pos`) and of the neighbor (`nbr_pos`), each in its own
// odometry frame. Consecutive pushes form one regressor sample.
// `outcome` may be null.
//
// # Safety
// `h` must be a live handle; `own_pos` and `nbr_pos` must point to three
// doubles; `outcome`, when non-null, must be writable.
enum SwlStatus swl_pair_push(struct SwlPairEstimator *h,
                             double d,
                             const double *own_pos,
                             const double *nbr_pos,
                             uint64_t tick,
                             enum SwlPushOutcome *outcome);

// Copies the seven-component parameter estimate into `out`.
//
// # Safety
// `h` must be a live handle and `out` must be writable for seven doubles.
enum SwlStatus swl_pair_theta(const struct SwlPairEstimator *h, double *out);

// Initial position of the neighbor relative to the owner (`p0`, three
// doubles, owner's odometry frame) and the initial relative yaw in radians.
//
// # Safety
// `h` must be a live handle; `p0` must be writable for three doubles and
// `yaw` for one.
enum SwlStatus swl_pair_pose(const struct SwlPairEstimator *h, double *p0, double *yaw);

// Ratio of the smallest to the largest eigenvalue of the recorded data
// matrix, in `[0, 1]`.
//
// # Safety
// `h` must be a live handle and `ratio` writable.
enum SwlStatus swl_pair_excitation(const struct SwlPairEstimator *h, double *ratio);

// Creates an outlier screen holding up to `capacity` accepted measurements;
// a candidate is an outlier when more than `threshold` of them vote so.
//
// # Safety
// `out` must be valid for writing one pointer.
enum SwlStatus swl_judge_new(uint32_t capacity, double threshold, struct SwlJudgeQueue **out);

// Releases a screen. Null is ignored.
//
// # Safety
// `h` must come from [`swl_judge_new`] and not be used afterwards.
void swl_judge_free(struct SwlJudgeQueue *h);

// Screens one measurement; inliers are enqueued. `votes` receives the
// outlier votes cast by the `size` queued measurements that judged it.
// `is_outlier`, `votes` and `size` may each be null.
//
// # Safety
// `h` must be a live handle; `z_i` and `z_j` must point to three doubles;
// non-null outputs must be writable.
enum SwlStatus swl_judge_screen(struct SwlJudgeQueue *h,
                                double d,
                                const double *z_i,
                                const double *z_j,
                                uint64_t tick,
                                int *is_outlier,
                                uint32_t *votes,
                                uint32_t *size);

// Loads a TOML scenario, runs it and writes its logs to `out_dir`. A
// non-zero `override_seed` replaces the configured seed with `seed`.
// `passed`, when non-null, receives whether the acceptance thresholds held.
//
// # Safety
// `config_path` and `out_dir` must be NUL-terminated strings; `passed`,
// when non-null, must be writable.
enum SwlStatus swl_run_scenario(const char *config_path,
                                const char *out_dir,
                                int override_seed,
                                uint64_t seed,
                                int *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWARMLOC_H */
