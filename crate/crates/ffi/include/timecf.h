#ifndef TIMECF_H
#define TIMECF_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TimecfStatus {
  TIMECF_STATUS_OK = 0,
  TIMECF_STATUS_NULL_POINTER = 1,
  TIMECF_STATUS_INVALID_ARGUMENT = 2,
  TIMECF_STATUS_DIMENSION = 3,
  TIMECF_STATUS_CHECKPOINT = 4,
  TIMECF_STATUS_IO = 5,
  TIMECF_STATUS_NUMERIC = 6,
  TIMECF_STATUS_PANIC = 7,
} TimecfStatus;

/*
 Opaque model handle.
 */
typedef struct TimecfModel TimecfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *timecf_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *timecf_version(void);

/*
 Builds a randomly initialized model from a JSON model configuration.

 # Safety
 `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TimecfStatus timecf_model_new(const char *config_json,
                                   uint64_t seed,
                                   struct TimecfModel **out);

/*
 Loads a checkpoint written by `timecf_model_save` or the `timecf` CLI.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TimecfStatus timecf_model_load(const char *path, struct TimecfModel **out);

/*
 # Safety
 `handle` must come from this library; `path` must be NUL-terminated.
 */
enum TimecfStatus timecf_model_save(const struct TimecfModel *handle, const char *path);

/*
 Releases a model. Null is ignored.

 # Safety
 `handle` must come from this library and must not be used afterwards.
 */
void timecf_model_free(struct TimecfModel *handle);

/*
 # Safety
 `handle` must come from this library; `out` must be valid.
 */
enum TimecfStatus timecf_model_parameter_count(const struct TimecfModel *handle, size_t *out);

/*
 Lookback length, horizon and calendar feature width of the model.

 # Safety
 `handle` must come from this library; the out pointers must be valid.
 */
enum TimecfStatus timecf_model_dims(const struct TimecfModel *handle,
                                    size_t *lookback,
                                    size_t *horizon,
                                    size_t *time_features);

/*
 Forecasts `batch` univariate series.

 `history` is `batch x lookback` raw values, `marks` is
 `batch x lookback x time_features` calendar features and `out` receives
 `batch x horizon` values; all row-major. `out_len` must equal
 `batch * horizon`.

 # Safety
 Each pointer must reference at least the stated number of `double`s.
 */
enum TimecfStatus timecf_model_forecast(const struct TimecfModel *handle,
                                        const double *history,
                                        const double *marks,
                                        size_t batch,
                                        double *out,
                                        size_t out_len);

/*
 Blended loss of one forecast against its target:
 `alpha * mean |rfft(pred) - rfft(target)| + (1 - alpha) * mse`.
 Each of `total`, `freq` and `mse` may be null.

 # Safety
 `pred` and `target` must each reference `len` doubles.
 */
enum TimecfStatus timecf_samfre_loss(const double *pred,
                                     const double *target,
                                     size_t len,
                                     double alpha,
                                     double *total,
                                     double *freq,
                                     double *mse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TIMECF_H */
