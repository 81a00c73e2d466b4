#ifndef HOTCOLD_H
#define HOTCOLD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum HcStatus {
  HC_STATUS_OK = 0,
  HC_STATUS_NULL_POINTER = 1,
  HC_STATUS_INVALID_UTF8 = 2,
  HC_STATUS_INVALID_ARGUMENT = 3,
  HC_STATUS_IO = 4,
  HC_STATUS_NOT_FOUND = 5,
  HC_STATUS_PREDICTION = 6,
  HC_STATUS_PANIC = 7,
} HcStatus;

// Data file format for [`hc_catalog_load`].
typedef enum HcFormat {
  HC_FORMAT_JSONL = 0,
  HC_FORMAT_CSV = 1,
} HcFormat;

// Content catalog with view history.
typedef struct HcCatalog HcCatalog;

// FTRL-Proximal optimizer state.
typedef struct HcFtrl HcFtrl;

// Trained model.
typedef struct HcModel HcModel;

// One scored content.
typedef struct HcPrediction {
  double probability;
  // 1 for hot, 0 for cold.
  int32_t hot;
  // 0 for series contents (route A), 1 for the rest (route B).
  int32_t route;
} HcPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hc_version(void);

// Message of the last failed call on this thread, or null after a
// success. Valid until the next call on the same thread.
const char *hc_last_error(void);

// Loads a model saved by `hotcold train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HcStatus hc_model_load_file(const char *path, struct HcModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`hc_model_load_file`] and not be used afterwards.
void hc_model_free(struct HcModel *model);

// Loads `contents` and `views` files from a directory.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum HcStatus hc_catalog_load(const char *dir, enum HcFormat format, struct HcCatalog **out);

// Releases a catalog. Null is ignored.
//
// # Safety
// `catalog` must come from [`hc_catalog_load`] and not be used afterwards.
void hc_catalog_free(struct HcCatalog *catalog);

// Scores one catalog content at decision date `at` (`YYYY-MM-DD`), which
// must not be after its release.
//
// # Safety
// Handles must be live, strings NUL-terminated and `out` valid.
enum HcStatus hc_predict(const struct HcModel *model,
                         const struct HcCatalog *catalog,
                         const char *content_id,
                         const char *at,
                         struct HcPrediction *out);

// FTRL-Proximal state for `dim` parameters starting from zero.
//
// # Safety
// `out` must be a valid pointer.
enum HcStatus hc_ftrl_new(size_t dim,
                          double alpha,
                          double beta,
                          double lambda1,
                          double lambda2,
                          struct HcFtrl **out);

// One update of `params` from the gradient `grad`, both of length `len`.
//
// # Safety
// `grad` and `params` must point to `len` doubles.
enum HcStatus hc_ftrl_step(struct HcFtrl *ftrl, const double *grad, double *params, size_t len);

// Releases an optimizer. Null is ignored.
//
// # Safety
// `ftrl` must come from [`hc_ftrl_new`] and not be used afterwards.
void hc_ftrl_free(struct HcFtrl *ftrl);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOTCOLD_H */
