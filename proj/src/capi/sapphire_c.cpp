#include "sapphire/sapphire.h"

#include <cstdio>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <sstream>
#include <string>

#include "sapphire/bench.hpp"
#include "sapphire/data.hpp"
#include "sapphire/errors.hpp"
#include "sapphire/losses.hpp"
#include "sapphire/regularizers.hpp"
#include "sapphire/selftest.hpp"
#include "sapphire/solver.hpp"

#ifndef SAPPHIRE_VERSION_STRING
#define SAPPHIRE_VERSION_STRING "0.0.0"
#endif

struct sapphire_dataset {
  std::shared_ptr<const sapphire::Dataset> data;
};

struct sapphire_problem {
  std::unique_ptr<sapphire::GlmLoss> loss;
  sapphire::Regularizer reg;
};

struct sapphire_result {
  sapphire::SolverResult result;
};

namespace {

thread_local std::string g_last_error;

sapphire_status fail(sapphire_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs f, translating exceptions into status codes.
template <typename F>
sapphire_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return SAPPHIRE_OK;
  } catch (const sapphire::DimensionMismatch& e) {
    return fail(SAPPHIRE_DIMENSION_MISMATCH, e.what());
  } catch (const sapphire::ParseError& e) {
    return fail(SAPPHIRE_PARSE_ERROR, e.what());
  } catch (const sapphire::IoError& e) {
    return fail(SAPPHIRE_IO_ERROR, e.what());
  } catch (const sapphire::NotPositiveDefinite& e) {
    return fail(SAPPHIRE_NOT_POSITIVE_DEFINITE, e.what());
  } catch (const sapphire::NumericalError& e) {
    return fail(SAPPHIRE_NUMERICAL_ERROR, e.what());
  } catch (const sapphire::InvalidArgument& e) {
    return fail(SAPPHIRE_INVALID_ARGUMENT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SAPPHIRE_INTERNAL_ERROR, "out of memory");
  } catch (const std::exception& e) {
    return fail(SAPPHIRE_INTERNAL_ERROR, e.what());
  } catch (...) {
    return fail(SAPPHIRE_INTERNAL_ERROR, "unknown exception");
  }
}

void require(bool cond, const char* what) {
  if (!cond) throw sapphire::InvalidArgument(what);
}

sapphire::SolverConfig to_cpp(const sapphire_solver_config& c) {
  sapphire::SolverConfig cfg;
  cfg.b_g = c.b_g;
  cfg.b_h = c.b_h;
  cfg.nyssn_rank = c.nyssn_rank;
  cfg.rho = c.rho;
  cfg.alpha = c.alpha;
  cfg.m = c.m;
  cfg.schedule.warmup_stages = c.warmup_stages;
  cfg.schedule.period = c.update_period;
  cfg.snapshot = c.snapshot_average ? sapphire::SnapshotOption::average
                                    : sapphire::SnapshotOption::last;
  cfg.eta_rule = c.eta_hessian_rule ? sapphire::EtaRule::hessian
                                    : sapphire::EtaRule::expected_smoothness;
  cfg.apg.strict_paper = c.strict_paper != 0;
  cfg.apg.tol = c.apg_tol;
  cfg.apg.t_max = c.apg_t_max;
  cfg.seed = c.seed;
  cfg.budget.max_passes = c.max_passes;
  cfg.budget.max_seconds = c.max_seconds;
  cfg.budget.max_stages = c.max_stages;
  cfg.tol = c.tol;
  cfg.saga_step = c.saga_step;
  return cfg;
}

void from_cpp(const sapphire::SolverConfig& cfg, sapphire_solver_config& c) {
  c.b_g = cfg.b_g;
  c.b_h = cfg.b_h;
  c.nyssn_rank = cfg.nyssn_rank;
  c.rho = cfg.rho;
  c.alpha = cfg.alpha;
  c.m = cfg.m;
  c.warmup_stages = cfg.schedule.warmup_stages;
  c.update_period = cfg.schedule.period;
  c.snapshot_average = cfg.snapshot == sapphire::SnapshotOption::average;
  c.eta_hessian_rule = cfg.eta_rule == sapphire::EtaRule::hessian;
  c.strict_paper = cfg.apg.strict_paper;
  c.apg_tol = cfg.apg.tol;
  c.apg_t_max = cfg.apg.t_max;
  c.seed = cfg.seed;
  c.max_passes = cfg.budget.max_passes;
  c.max_seconds = cfg.budget.max_seconds;
  c.max_stages = cfg.budget.max_stages;
  c.tol = cfg.tol;
  c.saga_step = cfg.saga_step;
}

void emit_lines(const std::string& text, sapphire_line_callback out, void* user) {
  if (!out) return;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out(line.c_str(), user);
}

}  // namespace

extern "C" {

const char* sapphire_version(void) { return SAPPHIRE_VERSION_STRING; }

const char* sapphire_status_string(sapphire_status status) {
  switch (status) {
    case SAPPHIRE_OK: return "ok";
    case SAPPHIRE_INVALID_ARGUMENT: return "invalid argument";
    case SAPPHIRE_DIMENSION_MISMATCH: return "dimension mismatch";
    case SAPPHIRE_PARSE_ERROR: return "parse error";
    case SAPPHIRE_IO_ERROR: return "i/o error";
    case SAPPHIRE_NOT_POSITIVE_DEFINITE: return "not positive definite";
    case SAPPHIRE_NUMERICAL_ERROR: return "numerical error";
    case SAPPHIRE_INTERNAL_ERROR: return "internal error";
  }
  return "unknown status";
}

const char* sapphire_last_error(void) { return g_last_error.c_str(); }

sapphire_status sapphire_dataset_load_libsvm(const char* path, int binary_labels,
                                             size_t n_features, sapphire_dataset** out) {
  return guarded([&] {
    require(path && out, "dataset_load_libsvm: null argument");
    sapphire::LibsvmOptions opts;
    if (n_features > 0) opts.n_features = n_features;
    opts.label_mode = binary_labels < 0   ? sapphire::LabelMode::automatic
                      : binary_labels > 0 ? sapphire::LabelMode::binary
                                          : sapphire::LabelMode::real;
    auto d = sapphire::load_libsvm(sapphire::resolve_dataset_path(path), opts);
    *out = new sapphire_dataset{std::make_shared<const sapphire::Dataset>(std::move(d))};
  });
}

sapphire_status sapphire_dataset_synthetic(const sapphire_synthetic_params* params,
                                           sapphire_dataset** out) {
  return guarded([&] {
    require(params && out, "dataset_synthetic: null argument");
    sapphire::SyntheticParams s;
    s.n = params->n;
    s.p = params->p;
    s.condition_number = params->condition_number;
    s.support_size = params->support_size;
    s.noise_std = params->noise_std;
    s.task = params->logistic ? sapphire::SyntheticTask::logistic : sapphire::SyntheticTask::lasso;
    s.seed = params->seed;
    auto prob = sapphire::make_synthetic(s);
    *out = new sapphire_dataset{std::make_shared<const sapphire::Dataset>(std::move(prob.dataset))};
  });
}

sapphire_status sapphire_dataset_from_dense(size_t n, size_t p, const double* features,
                                            const double* labels, int binary_labels,
                                            sapphire_dataset** out) {
  return guarded([&] {
    require(features && labels && out, "dataset_from_dense: null argument");
    require(n > 0 && p > 0, "dataset_from_dense: empty matrix");
    sapphire::DenseMatrix m(n, p);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < p; ++j) m(i, j) = features[i * p + j];
    sapphire::Dataset d;
    d.features = sapphire::SparseRowMatrix::from_dense(m);
    d.labels.assign(labels, labels + n);
    d.kind = binary_labels ? sapphire::LabelKind::binary : sapphire::LabelKind::real;
    d.validate();
    *out = new sapphire_dataset{std::make_shared<const sapphire::Dataset>(std::move(d))};
  });
}

size_t sapphire_dataset_rows(const sapphire_dataset* d) { return d ? d->data->n() : 0; }
size_t sapphire_dataset_cols(const sapphire_dataset* d) { return d ? d->data->p() : 0; }
size_t sapphire_dataset_nnz(const sapphire_dataset* d) {
  return d ? d->data->features.nnz() : 0;
}
void sapphire_dataset_free(sapphire_dataset* d) { delete d; }

sapphire_status sapphire_problem_create(const sapphire_dataset* data, sapphire_loss loss,
                                        double nu, sapphire_regularizer reg, double lambda,
                                        double shape, sapphire_problem** out) {
  return guarded([&] {
    require(data && out, "problem_create: null argument");
    auto prob = std::make_unique<sapphire_problem>();
    const auto kind =
        loss == SAPPHIRE_LOSS_LOGISTIC ? sapphire::LossKind::logistic : sapphire::LossKind::squared;
    require(loss == SAPPHIRE_LOSS_SQUARED || loss == SAPPHIRE_LOSS_LOGISTIC,
            "problem_create: unknown loss");
    prob->loss = std::make_unique<sapphire::GlmLoss>(kind, data->data, nu);
    switch (reg) {
      case SAPPHIRE_REG_NONE: prob->reg = sapphire::Regularizer::none(); break;
      case SAPPHIRE_REG_L1: prob->reg = sapphire::Regularizer::l1(lambda); break;
      case SAPPHIRE_REG_SCAD: prob->reg = sapphire::Regularizer::scad(lambda, shape); break;
      case SAPPHIRE_REG_MCP: prob->reg = sapphire::Regularizer::mcp(lambda, shape); break;
      default: throw sapphire::InvalidArgument("problem_create: unknown regularizer");
    }
    *out = prob.release();
  });
}

size_t sapphire_problem_dim(const sapphire_problem* problem) {
  return problem ? problem->loss->p() : 0;
}

sapphire_status sapphire_problem_objective(const sapphire_problem* problem, const double* w,
                                           size_t p, double* out) {
  return guarded([&] {
    require(problem && w && out, "problem_objective: null argument");
    if (p != problem->loss->p())
      throw sapphire::DimensionMismatch("problem_objective", problem->loss->p(), p);
    *out = sapphire::objective(*problem->loss, problem->reg, std::span<const double>(w, p));
  });
}

sapphire_status sapphire_problem_reference(const sapphire_problem* problem, double tol,
                                           double max_seconds, double* objective, double* w_out,
                                           size_t p) {
  return guarded([&] {
    require(problem && objective, "problem_reference: null argument");
    if (w_out && p != problem->loss->p())
      throw sapphire::DimensionMismatch("problem_reference", problem->loss->p(), p);
    sapphire::ReferenceOptions opts;
    if (tol > 0.0) opts.tol = tol;
    if (max_seconds > 0.0) opts.max_seconds = max_seconds;
    const auto sol = sapphire::reference_solve(*problem->loss, problem->reg, opts);
    *objective = sol.objective;
    if (w_out) std::memcpy(w_out, sol.w.data(), p * sizeof(double));
  });
}

void sapphire_problem_free(sapphire_problem* problem) { delete problem; }

void sapphire_solver_config_default(sapphire_solver_config* cfg) {
  if (!cfg) return;
  std::memset(cfg, 0, sizeof *cfg);
  cfg->method = SAPPHIRE_METHOD_SSN;
  from_cpp(sapphire::SolverConfig{}, *cfg);
}

sapphire_status sapphire_solver_config_set(sapphire_solver_config* cfg, const char* key,
                                           const char* value) {
  return guarded([&] {
    require(cfg && key && value, "solver_config_set: null argument");
    const std::string k = key, v = value;
    if (k == "method") {
      if (v == "sapphire-ssn") cfg->method = SAPPHIRE_METHOD_SSN;
      else if (v == "sapphire-nyssn") cfg->method = SAPPHIRE_METHOD_NYSSN;
      else if (v == "prox-svrg") cfg->method = SAPPHIRE_METHOD_PROX_SVRG;
      else if (v == "saga") cfg->method = SAPPHIRE_METHOD_SAGA;
      else throw sapphire::InvalidArgument("unknown method \"" + v + "\"");
      return;
    }
    auto c = to_cpp(*cfg);
    sapphire::bench::apply_override(c, k, v);
    from_cpp(c, *cfg);
  });
}

sapphire_status sapphire_solve(const sapphire_problem* problem, const sapphire_solver_config* cfg,
                               sapphire_result** out) {
  return guarded([&] {
    require(problem && cfg && out, "solve: null argument");
    auto c = to_cpp(*cfg);
    auto r = std::make_unique<sapphire_result>();
    switch (cfg->method) {
      case SAPPHIRE_METHOD_SSN:
        c.precond = sapphire::PreconditionerKind::ssn;
        r->result = sapphire::sapphire_run(*problem->loss, problem->reg, c);
        break;
      case SAPPHIRE_METHOD_NYSSN:
        c.precond = sapphire::PreconditionerKind::nyssn;
        r->result = sapphire::sapphire_run(*problem->loss, problem->reg, c);
        break;
      case SAPPHIRE_METHOD_PROX_SVRG:
        r->result = sapphire::prox_svrg_run(*problem->loss, problem->reg, c);
        break;
      case SAPPHIRE_METHOD_SAGA:
        r->result = sapphire::saga_run(*problem->loss, problem->reg, c);
        break;
      default: throw sapphire::InvalidArgument("solve: unknown method");
    }
    *out = r.release();
  });
}

sapphire_termination sapphire_result_termination(const sapphire_result* r) {
  if (!r) return SAPPHIRE_TERM_DIVERGED;
  switch (r->result.termination) {
    case sapphire::Termination::budget: return SAPPHIRE_TERM_BUDGET;
    case sapphire::Termination::tolerance: return SAPPHIRE_TERM_TOLERANCE;
    case sapphire::Termination::stall: return SAPPHIRE_TERM_STALL;
    case sapphire::Termination::diverged: return SAPPHIRE_TERM_DIVERGED;
  }
  return SAPPHIRE_TERM_DIVERGED;
}

size_t sapphire_result_dim(const sapphire_result* r) { return r ? r->result.w_final.size() : 0; }

sapphire_status sapphire_result_solution(const sapphire_result* r, double* out, size_t p) {
  return guarded([&] {
    require(r && out, "result_solution: null argument");
    if (p != r->result.w_final.size())
      throw sapphire::DimensionMismatch("result_solution", r->result.w_final.size(), p);
    std::memcpy(out, r->result.w_final.data(), p * sizeof(double));
  });
}

size_t sapphire_result_trace_length(const sapphire_result* r) {
  return r ? r->result.trace.size() : 0;
}

sapphire_status sapphire_result_trace_row(const sapphire_result* r, size_t index,
                                          sapphire_trace_row* out) {
  return guarded([&] {
    require(r && out, "result_trace_row: null argument");
    require(index < r->result.trace.size(), "result_trace_row: index out of range");
    const auto& t = r->result.trace[index];
    out->stage = t.stage;
    out->effective_passes = t.effective_passes;
    out->wall_seconds = t.wall_seconds;
    out->objective = t.objective;
    out->grad_map_norm = t.grad_map_norm;
    out->support_size = t.support_size;
    out->apg_iters = t.apg_iters_total;
    out->eta = t.eta;
    out->rebuilt = t.rebuilt;
  });
}

void sapphire_result_free(sapphire_result* r) { delete r; }

void sapphire_run_options_default(sapphire_run_options* options) {
  if (!options) return;
  std::memset(options, 0, sizeof *options);
  options->threads = 1;
  options->record_timing = 1;
}

sapphire_status sapphire_experiment_run(const char* spec_path, const sapphire_run_options* options,
                                        size_t* cells_failed) {
  return guarded([&] {
    require(spec_path != nullptr, "experiment_run: null spec path");
    sapphire_run_options defaults;
    sapphire_run_options_default(&defaults);
    const auto& o = options ? *options : defaults;
    sapphire::bench::RunOptions run;
    run.threads = o.threads == 0 ? 1 : o.threads;
    run.strict_paper = o.strict_paper != 0;
    run.record_timing = o.record_timing != 0;
    for (size_t i = 0; i < o.n_overrides; ++i) {
      require(o.overrides && o.overrides[i], "experiment_run: null override");
      const std::string kv = o.overrides[i];
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw sapphire::InvalidArgument("override \"" + kv + "\" is not key=value");
      run.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.log) run.log = [&o](const std::string& line) { o.log(line.c_str(), o.user); };
    const auto spec = sapphire::bench::load_experiment(spec_path);
    const auto outcome = sapphire::bench::run_experiment(spec, run);
    size_t failed = 0;
    for (const auto& c : outcome.cells) failed += c.status == "error" ? 1 : 0;
    if (cells_failed) *cells_failed = failed;
  });
}

sapphire_status sapphire_experiment_compare(const char* dir, double target,
                                            sapphire_line_callback out, void* user) {
  return guarded([&] {
    require(dir != nullptr, "experiment_compare: null directory");
    require(target > 0.0, "experiment_compare: target must be > 0");
    const auto outcome = sapphire::bench::compare_experiment(dir, target);
    emit_lines(outcome.table, out, user);
  });
}

sapphire_status sapphire_selftest(const char* fault, sapphire_line_callback out, void* user,
                                  int* exit_code) {
  return guarded([&] {
    sapphire::selftest::Options opts;
    if (fault && *fault) opts = sapphire::selftest::with_fault(opts, fault);
    const auto results = sapphire::selftest::run_all(opts, [&](const auto& r) {
      if (!out) return;
      char head[160];
      std::snprintf(head, sizeof head, "[%s] %-16s %7.2fs  ", r.passed ? "PASS" : "FAIL",
                    r.name.c_str(), r.seconds);
      out((std::string(head) + r.detail).c_str(), user);
    });
    const int code = sapphire::selftest::exit_code(results);
    if (exit_code) *exit_code = code;
    if (out) {
      std::size_t passed = 0;
      for (const auto& r : results) passed += r.passed ? 1 : 0;
      const std::string summary = std::to_string(passed) + "/" + std::to_string(results.size()) +
                                  " suites passed";
      out(summary.c_str(), user);
    }
  });
}

}  // extern "C"
