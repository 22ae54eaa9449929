#ifndef VERACITY_H
#define VERACITY_H

#include <stddef.h>
#include <stdint.h>

typedef enum VrStatus {
  VR_STATUS_OK = 0,
  VR_STATUS_NULL_POINTER = 1,
  VR_STATUS_INVALID_ARGUMENT = 2,
  VR_STATUS_SHAPE = 3,
  VR_STATUS_FIT_FAILED = 4,
  VR_STATUS_PARSE = 5,
  VR_STATUS_PANIC = 6,
} VrStatus;

typedef enum VrFitMode {
  VR_FIT_MODE_AUTO = 0,
  VR_FIT_MODE_EXACT = 1,
  VR_FIT_MODE_GIBBS = 2,
} VrFitMode;

// Opaque fitted label model.
typedef struct VrLabelModel VrLabelModel;

// Opaque vote matrix.
typedef struct VrVoteMatrix VrVoteMatrix;

// Label-model training options. Start from vr_fit_options_default() and
// adjust fields as needed. `mode` takes a VrFitMode value.
typedef struct VrFitOptions {
  size_t epochs;
  double step_size;
  uint64_t seed;
  uint32_t mode;
  size_t chains;
  size_t sweeps;
  double prior;
  double init_accuracy;
} VrFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty after a
// success. Valid until the next call into this library on the same thread.
const char *vr_last_error(void);

// Library version as a static NUL-terminated string.
const char *vr_version(void);

struct VrFitOptions vr_fit_options_default(void);

// Copies an m×n row-major vote array into a new matrix.
enum VrStatus vr_votes_new(const int8_t *votes,
                           size_t m,
                           size_t n,
                           struct VrVoteMatrix **out_matrix);

void vr_votes_free(struct VrVoteMatrix *matrix);

enum VrStatus vr_votes_shape(const struct VrVoteMatrix *matrix, size_t *out_m, size_t *out_n);

// Fits a label model. `pairs` holds `n_pairs` correlated column pairs as
// consecutive (j, k) indices; pass NULL and 0 for none.
enum VrStatus vr_label_model_fit(const struct VrVoteMatrix *matrix,
                                 const struct VrFitOptions *options,
                                 const size_t *pairs,
                                 size_t n_pairs,
                                 struct VrLabelModel **out_model);

void vr_label_model_free(struct VrLabelModel *model);

// Writes P(y = 1 | votes) for every row of `matrix` into `out_proba`,
// which must hold `len` = m values.
enum VrStatus vr_label_model_predict_proba(const struct VrLabelModel *model,
                                           const struct VrVoteMatrix *matrix,
                                           double *out_proba,
                                           size_t len);

// Number of weights: accuracies, then propensities, then one per
// correlated pair.
enum VrStatus vr_label_model_num_weights(const struct VrLabelModel *model, size_t *out_len);

enum VrStatus vr_label_model_weights(const struct VrLabelModel *model,
                                     double *out_weights,
                                     size_t len);

// Serialises the model as JSON. Release the string with vr_string_free().
enum VrStatus vr_label_model_to_json(const struct VrLabelModel *model, char **out_json);

enum VrStatus vr_label_model_from_json(const char *json, struct VrLabelModel **out_model);

void vr_string_free(char *s);

// Majority vote per row; ties and all-abstain rows give 0.
enum VrStatus vr_majority_vote(const struct VrVoteMatrix *matrix, uint8_t *out_labels, size_t len);

// Macro-averaged F1 over classes 0 and 1.
enum VrStatus vr_f1_macro(const uint8_t *preds, const uint8_t *labels, size_t len, double *out_f1);

// Pearson χ² (no continuity correction) and 1-dof p-value for the table
// [[a, b], [c, d]].
enum VrStatus vr_chi_squared(uint64_t a,
                             uint64_t b,
                             uint64_t c,
                             uint64_t d,
                             double *out_stat,
                             double *out_p);

// Parses an LLM completion into a vote: 1 (Yes), 0 (No) or -1 (Unsure).
// With `allow_unsure` = 0, unusable text maps to 0 instead of -1.
// `out_warning` (may be NULL) is set to 1 when the text held no clean answer.
enum VrStatus vr_parse_answer(const char *completion,
                              int32_t allow_unsure,
                              int8_t *out_vote,
                              int32_t *out_warning);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VERACITY_H */
