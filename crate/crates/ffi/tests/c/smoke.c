#include <stdio.h>
#include <string.h>
#include "veracity.h"

#define CHECK(x)                                                         \
  do {                                                                   \
    VrStatus s_ = (x);                                                   \
    if (s_ != VR_STATUS_OK) {                                            \
      fprintf(stderr, "%s failed (%d): %s\n", #x, s_, vr_last_error()); \
      return 1;                                                          \
    }                                                                    \
  } while (0)

int main(void) {
  const int8_t votes[] = {1, 1, 0, 0, 0, -1, 1, -1, 1, 0, 1, 0, 1, 1, 1, 0, 0, 0};
  VrVoteMatrix *vm = NULL;
  CHECK(vr_votes_new(votes, 6, 3, &vm));

  VrFitOptions opts = vr_fit_options_default();
  opts.mode = VR_FIT_MODE_EXACT;
  opts.epochs = 100;
  VrLabelModel *model = NULL;
  CHECK(vr_label_model_fit(vm, &opts, NULL, 0, &model));

  double proba[6];
  CHECK(vr_label_model_predict_proba(model, vm, proba, 6));
  for (int i = 0; i < 6; i++) {
    if (!(proba[i] >= 0.0 && proba[i] <= 1.0)) return 2;
  }

  char *json = NULL;
  CHECK(vr_label_model_to_json(model, &json));
  VrLabelModel *copy = NULL;
  CHECK(vr_label_model_from_json(json, &copy));
  vr_string_free(json);

  double stat = 0, p = 0;
  CHECK(vr_chi_squared(10, 20, 20, 10, &stat, &p));
  if (stat < 6.6666 || stat > 6.6667) return 3;

  int8_t vote = 0;
  CHECK(vr_parse_answer("  YES.", 1, &vote, NULL));
  if (vote != 1) return 4;

  if (vr_votes_new(NULL, 2, 2, &vm) != VR_STATUS_NULL_POINTER) return 5;
  if (strlen(vr_last_error()) == 0) return 6;

  vr_label_model_free(copy);
  vr_label_model_free(model);
  vr_votes_free(vm);
  printf("ok %s\n", vr_version());
  return 0;
}
