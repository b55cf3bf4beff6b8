/* Exercises the C interface from C. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "sapphire/sapphire.h"

static int failures = 0;

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: check failed: %s (last error: %s)\n",   \
              __FILE__, __LINE__, #cond, sapphire_last_error());      \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static void count_lines(const char* line, void* user) {
  (void)line;
  ++*(int*)user;
}

static void dense_problem(void) {
  /* Two samples, identity features: squared loss with labels (1, -1). */
  const double a[4] = {1, 0, 0, 1};
  const double y[2] = {1, -1};
  sapphire_dataset* d = NULL;
  CHECK(sapphire_dataset_from_dense(2, 2, a, y, 0, &d) == SAPPHIRE_OK);
  CHECK(sapphire_dataset_rows(d) == 2 && sapphire_dataset_cols(d) == 2);
  CHECK(sapphire_dataset_nnz(d) == 2);

  sapphire_problem* prob = NULL;
  CHECK(sapphire_problem_create(d, SAPPHIRE_LOSS_SQUARED, 0.0, SAPPHIRE_REG_NONE, 0.0, 0.0, &prob) ==
        SAPPHIRE_OK);
  /* Freeing the dataset early is allowed; the problem keeps its copy. */
  sapphire_dataset_free(d);
  const double zero[2] = {0, 0};
  double f = -1.0;
  CHECK(sapphire_problem_objective(prob, zero, 2, &f) == SAPPHIRE_OK);
  CHECK(fabs(f - 0.5) < 1e-15);
  CHECK(sapphire_problem_objective(prob, zero, 3, &f) == SAPPHIRE_DIMENSION_MISMATCH);
  CHECK(strlen(sapphire_last_error()) > 0);
  sapphire_problem_free(prob);
}

static void errors(void) {
  sapphire_dataset* d = NULL;
  CHECK(sapphire_dataset_load_libsvm("/nonexistent/file.svm", -1, 0, &d) == SAPPHIRE_IO_ERROR);
  CHECK(d == NULL);
  CHECK(strstr(sapphire_last_error(), "/nonexistent/file.svm") != NULL);
  CHECK(sapphire_dataset_synthetic(NULL, &d) == SAPPHIRE_INVALID_ARGUMENT);

  sapphire_solver_config cfg;
  sapphire_solver_config_default(&cfg);
  CHECK(sapphire_solver_config_set(&cfg, "not_a_key", "1") == SAPPHIRE_INVALID_ARGUMENT);
  CHECK(sapphire_solver_config_set(&cfg, "method", "saga") == SAPPHIRE_OK);
  CHECK(cfg.method == SAPPHIRE_METHOD_SAGA);
  CHECK(sapphire_solver_config_set(&cfg, "b_g", "12") == SAPPHIRE_OK && cfg.b_g == 12);
  CHECK(strcmp(sapphire_status_string(SAPPHIRE_PARSE_ERROR), "") != 0);
  CHECK(strlen(sapphire_version()) > 0);

  sapphire_dataset_free(NULL);
  sapphire_problem_free(NULL);
  sapphire_result_free(NULL);
}

static void solve_lasso(sapphire_method method) {
  sapphire_synthetic_params sp = {200, 20, 10.0, 4, 0.01, 0, 3};
  sapphire_dataset* d = NULL;
  CHECK(sapphire_dataset_synthetic(&sp, &d) == SAPPHIRE_OK);
  sapphire_problem* prob = NULL;
  CHECK(sapphire_problem_create(d, SAPPHIRE_LOSS_SQUARED, 0.0, SAPPHIRE_REG_L1, 1e-3, 0.0, &prob) ==
        SAPPHIRE_OK);
  sapphire_dataset_free(d);
  CHECK(sapphire_problem_dim(prob) == 20);

  double ref = 0.0;
  CHECK(sapphire_problem_reference(prob, 1e-12, 60.0, &ref, NULL, 0) == SAPPHIRE_OK);

  sapphire_solver_config cfg;
  sapphire_solver_config_default(&cfg);
  cfg.method = method;
  cfg.b_h = 200;
  cfg.alpha = 1.0;
  cfg.max_passes = 80;
  cfg.seed = 9;
  sapphire_result* r = NULL;
  CHECK(sapphire_solve(prob, &cfg, &r) == SAPPHIRE_OK);
  CHECK(sapphire_result_dim(r) == 20);
  const size_t len = sapphire_result_trace_length(r);
  CHECK(len >= 2);
  sapphire_trace_row last;
  CHECK(sapphire_result_trace_row(r, len - 1, &last) == SAPPHIRE_OK);
  CHECK(sapphire_result_trace_row(r, len, &last) == SAPPHIRE_INVALID_ARGUMENT);
  CHECK(sapphire_result_trace_row(r, len - 1, &last) == SAPPHIRE_OK);
  CHECK(last.effective_passes <= 80.0);
  CHECK((last.objective - ref) / fabs(ref) < 1e-6);

  double w[20];
  CHECK(sapphire_result_solution(r, w, 20) == SAPPHIRE_OK);
  double f = 0.0;
  CHECK(sapphire_problem_objective(prob, w, 20, &f) == SAPPHIRE_OK);
  CHECK(f == last.objective);
  CHECK(sapphire_result_solution(r, w, 19) == SAPPHIRE_DIMENSION_MISMATCH);
  sapphire_result_free(r);
  sapphire_problem_free(prob);
}

static void selftest_fault(void) {
  int lines = 0;
  int code = -1;
  CHECK(sapphire_selftest("no-such-fault", count_lines, &lines, &code) == SAPPHIRE_INVALID_ARGUMENT);
  lines = 0;
  CHECK(sapphire_selftest("soft-threshold-sign", count_lines, &lines, &code) == SAPPHIRE_OK);
  CHECK(code >= 1);
  CHECK(lines > 0);
}

int main(void) {
  dense_problem();
  errors();
  solve_lasso(SAPPHIRE_METHOD_SSN);
  solve_lasso(SAPPHIRE_METHOD_NYSSN);
  solve_lasso(SAPPHIRE_METHOD_SAGA);
  selftest_fault();
  if (failures == 0) printf("all C API checks passed\n");
  return failures == 0 ? 0 : 1;
}
