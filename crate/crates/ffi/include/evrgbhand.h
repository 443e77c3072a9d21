#ifndef EVRGBHAND_H
#define EVRGBHAND_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvrStatus {
  EVR_STATUS_OK = 0,
  EVR_STATUS_INVALID_ARGUMENT = 1,
  EVR_STATUS_DATA = 2,
  EVR_STATUS_NUMERICAL = 3,
  EVR_STATUS_SHAPE = 4,
  EVR_STATUS_IO = 5,
  EVR_STATUS_NULL_POINTER = 6,
  EVR_STATUS_PANIC = 7,
} EvrStatus;

/**
 * Opaque hand model.
 */
typedef struct EvrHandModel EvrHandModel;

/**
 * Opaque network.
 */
typedef struct EvrNet EvrNet;

/**
 * Opaque per-stream recurrent state.
 */
typedef struct EvrStream EvrStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *evr_last_error(void);

/**
 * Generated desk hand model for `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EvrStatus evr_hand_model_desk(uint64_t seed, struct EvrHandModel **out);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum EvrStatus evr_hand_model_load(const char *path_, struct EvrHandModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void evr_hand_model_free(struct EvrHandModel *model);

/**
 * Hand mesh for pose `theta[48]` and shape `beta[10]`: writes
 * `vertices[778*3]` and `joints[21*3]`, millimetres.
 *
 * # Safety
 * All pointers must be valid for the stated lengths.
 */
enum EvrStatus evr_mano_forward(const struct EvrHandModel *model,
                                const double *theta,
                                const double *beta,
                                double *vertices,
                                double *joints);

/**
 * Stacked event frame of `n` events (sorted by time, polarity ±1) at time
 * `t`: writes `out[2*height*width]`, positive channel first.
 *
 * # Safety
 * Input arrays must hold `n` elements and `out` `2*width*height`.
 */
enum EvrStatus evr_stack_events(const uint16_t *xs,
                                const uint16_t *ys,
                                const uint64_t *ts,
                                const int8_t *ps,
                                size_t n,
                                uint16_t width,
                                uint16_t height,
                                uint64_t t,
                                float *out);

/**
 * Loads a network checkpoint (f32, CPU).
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum EvrStatus evr_net_load(const char *path_, struct EvrNet **out);

/**
 * Freshly initialised desk-scale network.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum EvrStatus evr_net_new_desk(const struct EvrHandModel *model,
                                uint64_t seed,
                                struct EvrNet **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void evr_net_free(struct EvrNet *net);

/**
 * Side length of the square crops the network expects.
 *
 * # Safety
 * `net` must be a live handle and `out` a valid pointer.
 */
enum EvrStatus evr_net_input_size(const struct EvrNet *net, size_t *out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum EvrStatus evr_stream_new(struct EvrStream **out);

/**
 * # Safety
 * `stream` must come from this library and not be used afterwards.
 */
void evr_stream_free(struct EvrStream *stream);

/**
 * Advances `stream` by one step with an RGB crop `image[3*S*S]` and a
 * stacked event crop `events[2*S*S]` (channel-first, `S` the input size);
 * writes root-relative `joints[21*3]` and `vertices[778*3]`.
 *
 * # Safety
 * Handles must be live and arrays valid for the stated lengths.
 */
enum EvrStatus evr_net_step(const struct EvrNet *net,
                            struct EvrStream *stream,
                            const float *image,
                            const float *events,
                            double *joints,
                            double *vertices);

/**
 * Root-aligned mean per-joint error of `n` joints (`[n*3]` arrays, root first).
 *
 * # Safety
 * Arrays must hold `n*3` values and `out` must be valid.
 */
enum EvrStatus evr_mpjpe(const double *pred, const double *gt, size_t n, double *out);

/**
 * Mean per-joint error after similarity alignment.
 *
 * # Safety
 * Arrays must hold `n*3` values and `out` must be valid.
 */
enum EvrStatus evr_pa_mpjpe(const double *pred, const double *gt, size_t n, double *out);

/**
 * Area under the PCK curve over thresholds 0..=100 mm.
 *
 * # Safety
 * `errors` must hold `n` values and `out` must be valid.
 */
enum EvrStatus evr_pck_auc(const double *errors, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVRGBHAND_H */
