/* C interface to the sapphire solver library.
 *
 * Every function returns a sapphire_status; on failure a message is
 * available from sapphire_last_error() on the calling thread. Handles are
 * opaque and owned by the caller, who releases them with the matching
 * *_free function (passing NULL is allowed).
 */
#ifndef SAPPHIRE_SAPPHIRE_H
#define SAPPHIRE_SAPPHIRE_H

#include <stddef.h>
#include <stdint.h>

#if defined(SAPPHIRE_BUILDING_LIBRARY)
#define SAPPHIRE_API __attribute__((visibility("default")))
#else
#define SAPPHIRE_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sapphire_status {
  SAPPHIRE_OK = 0,
  SAPPHIRE_INVALID_ARGUMENT = 1,
  SAPPHIRE_DIMENSION_MISMATCH = 2,
  SAPPHIRE_PARSE_ERROR = 3,
  SAPPHIRE_IO_ERROR = 4,
  SAPPHIRE_NOT_POSITIVE_DEFINITE = 5,
  SAPPHIRE_NUMERICAL_ERROR = 6,
  SAPPHIRE_INTERNAL_ERROR = 7
} sapphire_status;

typedef enum sapphire_loss { SAPPHIRE_LOSS_SQUARED = 0, SAPPHIRE_LOSS_LOGISTIC = 1 } sapphire_loss;

typedef enum sapphire_regularizer {
  SAPPHIRE_REG_NONE = 0,
  SAPPHIRE_REG_L1 = 1,
  SAPPHIRE_REG_SCAD = 2,
  SAPPHIRE_REG_MCP = 3
} sapphire_regularizer;

typedef enum sapphire_method {
  SAPPHIRE_METHOD_SSN = 0,
  SAPPHIRE_METHOD_NYSSN = 1,
  SAPPHIRE_METHOD_PROX_SVRG = 2,
  SAPPHIRE_METHOD_SAGA = 3
} sapphire_method;

typedef enum sapphire_termination {
  SAPPHIRE_TERM_BUDGET = 0,
  SAPPHIRE_TERM_TOLERANCE = 1,
  SAPPHIRE_TERM_STALL = 2,
  SAPPHIRE_TERM_DIVERGED = 3
} sapphire_termination;

typedef struct sapphire_dataset sapphire_dataset;
typedef struct sapphire_problem sapphire_problem;
typedef struct sapphire_result sapphire_result;

typedef void (*sapphire_line_callback)(const char* line, void* user);

SAPPHIRE_API const char* sapphire_version(void);
SAPPHIRE_API const char* sapphire_status_string(sapphire_status status);
/* Message of the last failed call on this thread; "" if none. */
SAPPHIRE_API const char* sapphire_last_error(void);

/* ---- datasets ---------------------------------------------------------- */

typedef struct sapphire_synthetic_params {
  size_t n;
  size_t p;
  double condition_number;
  size_t support_size;
  double noise_std;
  int logistic; /* 0: real labels, 1: +-1 labels */
  uint64_t seed;
} sapphire_synthetic_params;

/* binary_labels: -1 automatic, 0 real, 1 binary. n_features 0: infer. */
SAPPHIRE_API sapphire_status sapphire_dataset_load_libsvm(const char* path, int binary_labels,
                                                          size_t n_features,
                                                          sapphire_dataset** out);
SAPPHIRE_API sapphire_status sapphire_dataset_synthetic(const sapphire_synthetic_params* params,
                                                        sapphire_dataset** out);
/* features: n x p row-major. */
SAPPHIRE_API sapphire_status sapphire_dataset_from_dense(size_t n, size_t p, const double* features,
                                                         const double* labels, int binary_labels,
                                                         sapphire_dataset** out);
SAPPHIRE_API size_t sapphire_dataset_rows(const sapphire_dataset* d);
SAPPHIRE_API size_t sapphire_dataset_cols(const sapphire_dataset* d);
SAPPHIRE_API size_t sapphire_dataset_nnz(const sapphire_dataset* d);
SAPPHIRE_API void sapphire_dataset_free(sapphire_dataset* d);

/* ---- problems ---------------------------------------------------------- */

/* shape is SCAD's a or MCP's gamma and is ignored otherwise. */
SAPPHIRE_API sapphire_status sapphire_problem_create(const sapphire_dataset* data,
                                                     sapphire_loss loss, double nu,
                                                     sapphire_regularizer reg, double lambda,
                                                     double shape, sapphire_problem** out);
SAPPHIRE_API size_t sapphire_problem_dim(const sapphire_problem* problem);
SAPPHIRE_API sapphire_status sapphire_problem_objective(const sapphire_problem* problem,
                                                        const double* w, size_t p, double* out);
/* High-accuracy solution; w_out (length p) may be NULL. */
SAPPHIRE_API sapphire_status sapphire_problem_reference(const sapphire_problem* problem, double tol,
                                                        double max_seconds, double* objective,
                                                        double* w_out, size_t p);
SAPPHIRE_API void sapphire_problem_free(sapphire_problem* problem);

/* ---- solving ----------------------------------------------------------- */

/* Zero sizes and rho = 0 select the problem-derived defaults. */
typedef struct sapphire_solver_config {
  sapphire_method method;
  size_t b_g;
  size_t b_h;
  size_t nyssn_rank;
  double rho;
  double alpha;
  size_t m;
  size_t warmup_stages;
  size_t update_period;
  int snapshot_average;       /* 0: last inner iterate */
  int eta_hessian_rule;       /* 0: expected-smoothness rule */
  int strict_paper;
  double apg_tol;
  size_t apg_t_max;
  uint64_t seed;
  double max_passes;
  double max_seconds;
  size_t max_stages;
  double tol;
  double saga_step;
} sapphire_solver_config;

SAPPHIRE_API void sapphire_solver_config_default(sapphire_solver_config* cfg);
/* Same keys as the CLI --override flag. */
SAPPHIRE_API sapphire_status sapphire_solver_config_set(sapphire_solver_config* cfg,
                                                        const char* key, const char* value);

typedef struct sapphire_trace_row {
  size_t stage;
  double effective_passes;
  double wall_seconds;
  double objective;
  double grad_map_norm;
  size_t support_size;
  size_t apg_iters;
  double eta;
  int rebuilt;
} sapphire_trace_row;

SAPPHIRE_API sapphire_status sapphire_solve(const sapphire_problem* problem,
                                            const sapphire_solver_config* cfg,
                                            sapphire_result** out);
SAPPHIRE_API sapphire_termination sapphire_result_termination(const sapphire_result* r);
SAPPHIRE_API size_t sapphire_result_dim(const sapphire_result* r);
SAPPHIRE_API sapphire_status sapphire_result_solution(const sapphire_result* r, double* out,
                                                      size_t p);
SAPPHIRE_API size_t sapphire_result_trace_length(const sapphire_result* r);
SAPPHIRE_API sapphire_status sapphire_result_trace_row(const sapphire_result* r, size_t index,
                                                       sapphire_trace_row* out);
SAPPHIRE_API void sapphire_result_free(sapphire_result* r);

/* ---- experiments ------------------------------------------------------- */

typedef struct sapphire_run_options {
  unsigned threads;             /* 1: sequential cells */
  int strict_paper;
  int record_timing;            /* 0: seconds column written as zeros */
  const char* const* overrides; /* "key=value" strings */
  size_t n_overrides;
  sapphire_line_callback log;   /* may be NULL */
  void* user;
} sapphire_run_options;

SAPPHIRE_API void sapphire_run_options_default(sapphire_run_options* options);
/* cells_failed receives the number of cells that raised an error. */
SAPPHIRE_API sapphire_status sapphire_experiment_run(const char* spec_path,
                                                     const sapphire_run_options* options,
                                                     size_t* cells_failed);
/* Writes compare.csv into dir and emits the ranking table line by line. */
SAPPHIRE_API sapphire_status sapphire_experiment_compare(const char* dir, double target,
                                                         sapphire_line_callback out, void* user);
/* fault may be NULL. exit_code receives failed suites capped at 125. */
SAPPHIRE_API sapphire_status sapphire_selftest(const char* fault, sapphire_line_callback out,
                                               void* user, int* exit_code);

#ifdef __cplusplus
}
#endif

#endif /* SAPPHIRE_SAPPHIRE_H */
