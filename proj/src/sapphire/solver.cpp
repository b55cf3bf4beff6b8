#include "sapphire/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "sapphire/errors.hpp"
#include "sapphire/rng.hpp"

namespace sapphire {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kEtaPowerTol = 1e-2;
constexpr std::size_t kEtaPowerMaxIter = 100;
// Samples used for the per-sample curvature maximum.
constexpr std::size_t kTauSamples = 256;
// Assumed (1 + zeta) when the curvature estimate is unusable.
constexpr double kFallbackSmoothness = 2.0;
// Objective growth over the starting value treated as divergence.
constexpr double kBlowupFactor = 1e10;

// Seed streams derived from the user seed.
constexpr std::uint64_t kStreamBatches = 1;
constexpr std::uint64_t kStreamHessian = 2;
constexpr std::uint64_t kStreamPrecond = 3;
constexpr std::uint64_t kStreamEta = 4;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t ceil_sqrt(std::size_t n) {
  auto r = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (r > 1 && (r - 1) * (r - 1) >= n) --r;
  while (r * r < n) ++r;
  return r;
}

Vector initial_point(const SolverConfig& cfg, std::size_t p) {
  if (cfg.w0.empty()) return Vector(p, 0.0);
  if (cfg.w0.size() != p) throw DimensionMismatch("SolverConfig::w0", p, cfg.w0.size());
  if (!all_finite(cfg.w0)) throw InvalidArgument("SolverConfig::w0 must be finite");
  return cfg.w0;
}

// Safe step for the gradient mapping diagnostic.
double mapping_step(const Regularizer& reg) {
  return std::min(1.0, 0.5 * reg.max_prox_step());
}

bool blew_up(double value, double initial) {
  return !std::isfinite(value) || value > kBlowupFactor * std::max(1.0, std::abs(initial));
}

// Stall bookkeeping: counts consecutive records without a relative
// decrease of at least rtol below the best objective so far.
class StallMonitor {
 public:
  StallMonitor(double rtol, std::size_t limit) : rtol_(rtol), limit_(limit) {}
  bool update(double objective) {
    if (limit_ == 0) return false;
    const double bar = best_ - rtol_ * std::max(std::abs(best_), 1e-300);
    if (objective < bar) {
      best_ = objective;
      count_ = 0;
    } else {
      best_ = std::min(best_, objective);
      ++count_;
    }
    return count_ >= limit_;
  }

 private:
  double rtol_;
  std::size_t limit_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t count_ = 0;
};

struct Built {
  std::unique_ptr<Preconditioner> precond;
  double rho = 0.0;
};

Built build_preconditioner(const GlmLoss& loss, const SolverConfig& cfg,
                           std::span<const double> w,
                           std::span<const std::size_t> batch, std::uint64_t seed) {
  Built out;
  if (cfg.precond == PreconditionerKind::identity) {
    out.precond = std::make_unique<IdentityPreconditioner>(loss.p(), 1.0);
    return out;
  }
  HessianSketchFactor factor(loss, w, batch);
  out.rho = cfg.rho > 0.0 ? cfg.rho : default_rho(factor);
  const double sigma = out.rho + loss.nu();
  if (cfg.precond == PreconditionerKind::ssn) {
    out.precond = std::make_unique<SsnPreconditioner>(std::move(factor), sigma, seed);
  } else {
    const std::size_t r = std::min(cfg.nyssn_rank, loss.p());
    auto approx = rand_nys_approx(
        [&factor](std::span<const double> x, std::span<double> y) { factor.gram_apply(x, y); },
        loss.p(), r, seed);
    out.precond = std::make_unique<NyssnPreconditioner>(std::move(approx), sigma);
  }
  return out;
}

TraceRecord make_record(const GlmLoss& loss, const Regularizer& reg,
                        std::span<const double> w, std::span<const double> grad,
                        std::uint64_t evals, Clock::time_point start) {
  TraceRecord r;
  r.gradient_evaluations = evals;
  r.effective_passes = static_cast<double>(evals) / static_cast<double>(loss.n());
  r.wall_seconds = seconds_since(start);
  r.objective = objective(loss, reg, w);
  r.grad_map_norm = gradient_mapping_norm(reg, w, grad);
  r.support_size = support(w, 0.0).size();
  return r;
}

// Upper bound on the full-gradient Lipschitz constant, inflated by safety.
double smoothness_bound(const GlmLoss& loss, double safety) {
  const auto& a = loss.data().features;
  const double n = static_cast<double>(loss.n());
  const double c = loss.max_link_curvature();
  const auto pw = power_iteration(
      [&](std::span<const double> x, std::span<double> y) {
        const auto ax = spmv(a, x);
        const auto atax = spmv_t(a, ax);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = c * atax[i] / n;
      },
      loss.p(), 1e-4, 300, 0x5eedULL);
  return safety * pw.value + loss.nu();
}

}  // namespace

const char* to_string(Termination t) noexcept {
  switch (t) {
    case Termination::budget: return "budget";
    case Termination::tolerance: return "tolerance";
    case Termination::stall: return "stall";
    case Termination::diverged: return "diverged";
  }
  return "unknown";
}

void SolverConfig::validate(std::size_t n) const {
  if (n == 0) throw InvalidArgument("solver: dataset has no samples");
  if (b_g > n) throw InvalidArgument("solver: b_g exceeds n");
  if (b_h > n) throw InvalidArgument("solver: b_H exceeds n");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("solver: alpha must be > 0");
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidArgument("solver: rho must be >= 0");
  if (precond == PreconditionerKind::nyssn && nyssn_rank == 0)
    throw InvalidArgument("solver: NySSN rank must be >= 1");
  if (!(budget.max_passes > 0.0)) throw InvalidArgument("solver: pass budget must be > 0");
  if (!(budget.max_seconds > 0.0)) throw InvalidArgument("solver: time budget must be > 0");
  if (!(tol >= 0.0)) throw InvalidArgument("solver: tol must be >= 0");
  if (!(saga_step > 0.0)) throw InvalidArgument("solver: saga_step must be > 0");
}

SolverConfig SolverConfig::resolve(std::size_t n) const {
  validate(n);
  SolverConfig out = *this;
  const std::size_t root = std::min(ceil_sqrt(n), n);
  if (out.b_g == 0) out.b_g = std::max<std::size_t>(1, root);
  if (out.b_h == 0) out.b_h = std::max<std::size_t>(1, root);
  if (out.m == 0) out.m = std::max<std::size_t>(1, (2 * n + out.b_g - 1) / out.b_g);
  return out;
}

Vector variance_reduced_gradient(const GlmLoss& loss, std::span<const double> w_k,
                                 std::span<const double> snapshot,
                                 std::span<const double> snapshot_gradient,
                                 std::span<const std::size_t> batch) {
  const std::size_t p = loss.p();
  if (w_k.size() != p) throw DimensionMismatch("variance_reduced_gradient w_k", p, w_k.size());
  if (snapshot.size() != p)
    throw DimensionMismatch("variance_reduced_gradient snapshot", p, snapshot.size());
  if (snapshot_gradient.size() != p)
    throw DimensionMismatch("variance_reduced_gradient gradient", p, snapshot_gradient.size());
  if (batch.empty()) throw InvalidArgument("variance_reduced_gradient: empty batch");
  const auto& data = loss.data();
  Vector v(p, 0.0);
  for (auto i : batch) {
    if (i >= loss.n()) throw InvalidArgument("variance_reduced_gradient: index out of range");
    const double y = data.labels[i];
    const double c = loss.link_derivative(loss.margin(i, w_k), y) -
                     loss.link_derivative(loss.margin(i, snapshot), y);
    if (c != 0.0) data.features.row_axpy(i, c, v);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double nu = loss.nu();
  for (std::size_t j = 0; j < p; ++j)
    v[j] = v[j] * inv_b + nu * (w_k[j] - snapshot[j]) + snapshot_gradient[j];
  return v;
}

EtaEstimate estimate_eta(const GlmLoss& loss, const Preconditioner& p,
                         std::span<const double> w,
                         std::span<const std::size_t> fresh_batch, double rho,
                         const SolverConfig& cfg, std::uint64_t seed) {
  if (fresh_batch.empty()) throw InvalidArgument("estimate_eta: empty batch");
  EtaEstimate est;
  const double shift = p.kind() == PreconditionerKind::identity ? 0.0 : rho;
  const auto weights = loss.hessian_weights(w, fresh_batch);
  const auto pw = generalized_power_iteration(
      [&](std::span<const double> x, std::span<double> y) {
        const auto hx = loss.subsampled_hvp(w, fresh_batch, x);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = hx[i] + shift * x[i];
      },
      p, kEtaPowerTol, kEtaPowerMaxIter, seed);
  est.lambda_hat = pw.value;

  // Per-sample curvature d_i a_i^T P^{-1} a_i + nu / sigma_min(P).
  const auto& a = loss.data().features;
  Vector e(loss.p(), 0.0);
  Vector z(loss.p());
  double tau = 0.0;
  const std::size_t tau_count = std::min(fresh_batch.size(), kTauSamples);
  for (std::size_t k = 0; k < tau_count; ++k) {
    const double d = weights[k];
    if (d == 0.0) continue;
    const auto row = a.row(fresh_batch[k]);
    for (std::size_t t = 0; t < row.cols.size(); ++t) e[row.cols[t]] = row.values[t];
    p.solve(e, z);
    double q = 0.0;
    for (std::size_t t = 0; t < row.cols.size(); ++t) q += row.values[t] * z[row.cols[t]];
    tau = std::max(tau, d * q);
    for (std::size_t t = 0; t < row.cols.size(); ++t) e[row.cols[t]] = 0.0;
  }
  est.tau_hat = tau + loss.nu() / p.shift();

  double smooth = est.lambda_hat;
  if (cfg.eta_rule == EtaRule::expected_smoothness) {
    const double n = static_cast<double>(loss.n());
    const double b = static_cast<double>(std::min(cfg.b_g, loss.n()));
    if (loss.n() > 1) {
      smooth = n * (b - 1.0) / (b * (n - 1.0)) * est.lambda_hat +
               (n - b) / (b * (n - 1.0)) * est.tau_hat;
    } else {
      smooth = est.tau_hat;
    }
  }
  if (!std::isfinite(smooth) || !(smooth > 0.0)) {
    est.fallback = true;
    smooth = kFallbackSmoothness;
  } else if (!pw.converged) {
    // Scale the assumed (1 + zeta) by the Rayleigh estimate so the
    // fallback stays meaningful for unnormalized metrics.
    est.fallback = true;
    smooth *= kFallbackSmoothness;
  }
  est.smoothness = smooth;
  est.eta = cfg.alpha / smooth;
  return est;
}

double objective(const GlmLoss& loss, const Regularizer& reg, std::span<const double> w) {
  return loss.value(w) + reg.value(w);
}

double gradient_mapping_norm(const Regularizer& reg, std::span<const double> w,
                             std::span<const double> grad) {
  if (w.size() != grad.size()) throw DimensionMismatch("gradient_mapping_norm", w.size(), grad.size());
  const double t = mapping_step(reg);
  Vector x(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) x[i] = w[i] - t * grad[i];
  reg.prox_inplace(x, t);
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - x[i];
    s += d * d;
  }
  return std::sqrt(s) / t;
}

SolverResult sapphire_run(const GlmLoss& loss, const Regularizer& reg,
                          const SolverConfig& config, const SolverHooks& hooks) {
  const SolverConfig cfg = config.resolve(loss.n());
  const std::size_t n = loss.n();
  const std::size_t p = loss.p();
  const auto start = Clock::now();

  SolverResult result;
  Vector snapshot = initial_point(cfg, p);
  Vector grad = loss.full_gradient(snapshot);
  std::uint64_t evals = 0;

  result.trace.push_back(make_record(loss, reg, snapshot, grad, evals, start));
  if (!std::isfinite(result.trace.back().objective)) {
    result.termination = Termination::diverged;
    result.message = "non-finite objective at the initial point";
    result.w_final = std::move(snapshot);
    return result;
  }

  Rng batch_rng(mix_seed(cfg.seed, kStreamBatches));
  Rng hessian_rng(mix_seed(cfg.seed, kStreamHessian));
  std::unique_ptr<Preconditioner> precond;
  double rho = 0.0;
  double eta = 0.0;
  std::size_t rebuilds = 0;
  StallMonitor stall(cfg.stall_rtol, cfg.stall_stages);
  stall.update(result.trace.back().objective);

  ApgOptions apg = cfg.apg;
  Vector w(p);
  Vector average(p);

  for (std::size_t stage = 0;; ++stage) {
    if (stage >= cfg.budget.max_stages) {
      result.termination = Termination::budget;
      result.message = "stage limit reached";
      break;
    }
    const bool rebuild = !precond || cfg.schedule.fires(stage);
    const bool counts_hessian = rebuild && cfg.precond != PreconditionerKind::identity;
    const std::uint64_t cost =
        n + 2 * static_cast<std::uint64_t>(cfg.m) * cfg.b_g + (counts_hessian ? cfg.b_h : 0);
    if (static_cast<double>(evals + cost) / static_cast<double>(n) >
        cfg.budget.max_passes * (1.0 + 1e-12)) {
      result.termination = Termination::budget;
      result.message = "pass budget exhausted";
      break;
    }
    if (seconds_since(start) >= cfg.budget.max_seconds) {
      result.termination = Termination::budget;
      result.message = "time budget exhausted";
      break;
    }

    std::size_t apg_iters = 0;
    try {
      if (rebuild) {
        const auto hbatch = hessian_rng.sample_without_replacement(n, cfg.b_h);
        auto built = build_preconditioner(loss, cfg, snapshot, hbatch,
                                          mix_seed(cfg.seed, kStreamPrecond + 16 * rebuilds));
        precond = std::move(built.precond);
        rho = built.rho;
        const auto fresh = hessian_rng.sample_without_replacement(n, cfg.b_h);
        const auto est = estimate_eta(loss, *precond, snapshot, fresh, rho, cfg,
                                      mix_seed(cfg.seed, kStreamEta + 16 * rebuilds));
        eta = est.eta;
        ++rebuilds;
        if (hooks.on_rebuild) hooks.on_rebuild(stage, *precond, eta);
      }
      apg.strict_rho = rho;

      std::copy(snapshot.begin(), snapshot.end(), w.begin());
      std::fill(average.begin(), average.end(), 0.0);
      for (std::size_t k = 0; k < cfg.m; ++k) {
        const auto batch = batch_rng.sample_without_replacement(n, cfg.b_g);
        const auto v = variance_reduced_gradient(loss, w, snapshot, grad, batch);
        const ScaledProxProblem prob{precond.get(), &reg, w, v, eta};
        auto step = scaled_prox(prob, apg);
        apg_iters += step.iterations;
        if (hooks.on_inner_step)
          hooks.on_inner_step(InnerStep{stage, k, batch, w, snapshot, grad, v, step.solution});
        w.swap(step.solution);
        if (cfg.snapshot == SnapshotOption::average) axpy(1.0, w, average);
      }
    } catch (const NumericalError& e) {
      result.termination = Termination::diverged;
      result.message = e.what();
      break;
    }

    if (cfg.snapshot == SnapshotOption::average) {
      scal(1.0 / static_cast<double>(cfg.m), average);
      snapshot.swap(average);
    } else {
      std::copy(w.begin(), w.end(), snapshot.begin());
    }
    evals += cost;
    grad = loss.full_gradient(snapshot);

    auto rec = make_record(loss, reg, snapshot, grad, evals, start);
    rec.stage = stage + 1;
    rec.apg_iters_total = apg_iters;
    rec.eta = eta;
    rec.rebuilt = rebuild;
    result.trace.push_back(rec);

    if (blew_up(rec.objective, result.trace.front().objective) || !all_finite(snapshot)) {
      result.termination = Termination::diverged;
      result.message = std::isfinite(rec.objective) ? "objective blew up" : "non-finite objective";
      break;
    }
    if (cfg.tol > 0.0 && rec.grad_map_norm <= cfg.tol) {
      result.termination = Termination::tolerance;
      result.message = "gradient mapping below tolerance";
      break;
    }
    if (stall.update(rec.objective)) {
      result.termination = Termination::stall;
      result.message = "objective stalled";
      break;
    }
  }
  result.w_final = std::move(snapshot);
  return result;
}

SolverResult prox_svrg_run(const GlmLoss& loss, const Regularizer& reg,
                           const SolverConfig& cfg, const SolverHooks& hooks) {
  SolverConfig c = cfg;
  c.precond = PreconditionerKind::identity;
  // The step size is estimated once; there is no metric to refresh.
  c.schedule = UpdateSchedule{1, 0};
  return sapphire_run(loss, reg, c, hooks);
}

SagaState::SagaState(const GlmLoss& loss, Vector w0)
    : loss_(loss), w_(std::move(w0)), table_(loss.n(), 0.0), mean_(loss.p(), 0.0),
      direction_(loss.p(), 0.0) {
  if (w_.size() != loss.p()) throw DimensionMismatch("SagaState w0", loss.p(), w_.size());
}

const Vector& SagaState::step(std::span<const std::size_t> batch, double eta,
                              const Regularizer& reg) {
  if (batch.empty()) throw InvalidArgument("SagaState::step: empty batch");
  const auto& data = loss_.data();
  const std::size_t p = loss_.p();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(loss_.n());
  Vector delta(p, 0.0);
  Vector fresh(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto i = batch[k];
    if (i >= loss_.n()) throw InvalidArgument("SagaState::step: index out of range");
    fresh[k] = loss_.link_derivative(loss_.margin(i, w_), data.labels[i]);
    const double c = fresh[k] - table_[i];
    if (c != 0.0) data.features.row_axpy(i, c, delta);
  }
  const double nu = loss_.nu();
  for (std::size_t j = 0; j < p; ++j)
    direction_[j] = delta[j] * inv_b + mean_[j] + nu * w_[j];
  for (std::size_t k = 0; k < batch.size(); ++k) table_[batch[k]] = fresh[k];
  axpy(inv_n, delta, mean_);
  for (std::size_t j = 0; j < p; ++j) w_[j] -= eta * direction_[j];
  reg.prox_inplace(w_, eta);
  if (!all_finite(w_)) throw NumericalError("SAGA: non-finite iterate");
  return direction_;
}

Vector SagaState::recompute_table_mean() const {
  Vector m(loss_.p(), 0.0);
  const auto& a = loss_.data().features;
  for (std::size_t i = 0; i < loss_.n(); ++i)
    if (table_[i] != 0.0) a.row_axpy(i, table_[i], m);
  scal(1.0 / static_cast<double>(loss_.n()), m);
  return m;
}

SolverResult saga_run(const GlmLoss& loss, const Regularizer& reg,
                      const SolverConfig& config) {
  const SolverConfig cfg = config.resolve(loss.n());
  const std::size_t n = loss.n();
  const auto start = Clock::now();
  const auto& a = loss.data().features;

  double row_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) row_max = std::max(row_max, a.row_squared_norm(i));
  const double l_max = loss.max_link_curvature() * row_max + loss.nu();
  const double l_full = smoothness_bound(loss, 1.0);
  // Minibatch smoothness between the full-gradient and per-sample constants.
  const double nd = static_cast<double>(n);
  const double b = static_cast<double>(cfg.b_g);
  const double l_batch = n > 1 ? nd * (b - 1.0) / (b * (nd - 1.0)) * l_full +
                                     (nd - b) / (b * (nd - 1.0)) * l_max
                               : l_max;
  double eta = l_batch > 0.0 ? cfg.saga_step / l_batch : cfg.saga_step;
  eta = std::min(eta, 0.5 * reg.max_prox_step());

  SolverResult result;
  SagaState state(loss, initial_point(cfg, loss.p()));
  std::uint64_t evals = 0;
  {
    const auto g = loss.full_gradient(state.w());
    result.trace.push_back(make_record(loss, reg, state.w(), g, evals, start));
  }
  StallMonitor stall(cfg.stall_rtol, cfg.stall_stages);
  stall.update(result.trace.back().objective);

  Rng rng(mix_seed(cfg.seed, kStreamBatches));
  const std::size_t steps = (n + cfg.b_g - 1) / cfg.b_g;
  const std::uint64_t cost = static_cast<std::uint64_t>(steps) * cfg.b_g;
  for (std::size_t epoch = 0;; ++epoch) {
    if (epoch >= cfg.budget.max_stages ||
        static_cast<double>(evals + cost) / static_cast<double>(n) >
            cfg.budget.max_passes * (1.0 + 1e-12) ||
        seconds_since(start) >= cfg.budget.max_seconds) {
      result.termination = Termination::budget;
      result.message = "budget exhausted";
      break;
    }
    try {
      for (std::size_t k = 0; k < steps; ++k) {
        const auto batch = rng.sample_without_replacement(n, cfg.b_g);
        state.step(batch, eta, reg);
      }
    } catch (const NumericalError& e) {
      result.termination = Termination::diverged;
      result.message = e.what();
      break;
    }
    evals += cost;
    const auto g = loss.full_gradient(state.w());
    auto rec = make_record(loss, reg, state.w(), g, evals, start);
    rec.stage = epoch + 1;
    rec.eta = eta;
    result.trace.push_back(rec);
    if (blew_up(rec.objective, result.trace.front().objective)) {
      result.termination = Termination::diverged;
      result.message = std::isfinite(rec.objective) ? "objective blew up" : "non-finite objective";
      break;
    }
    if (cfg.tol > 0.0 && rec.grad_map_norm <= cfg.tol) {
      result.termination = Termination::tolerance;
      result.message = "gradient mapping below tolerance";
      break;
    }
    if (stall.update(rec.objective)) {
      result.termination = Termination::stall;
      result.message = "objective stalled";
      break;
    }
  }
  result.w_final = state.w();
  return result;
}

Suboptimality suboptimality_from_values(double value, double reference) {
  Suboptimality s;
  double gap = value - reference;
  if (gap < 0.0) {
    s.clipped = true;
    gap = 0.0;
  }
  s.absolute = gap;
  const double scale = std::abs(reference);
  s.relative = scale > 0.0 ? gap / scale : gap;
  return s;
}

Suboptimality compute_suboptimality(const GlmLoss& loss, const Regularizer& reg,
                                    std::span<const double> w,
                                    std::span<const double> reference) {
  return suboptimality_from_values(objective(loss, reg, w), objective(loss, reg, reference));
}

namespace {

// Restricted smooth objective on a fixed sign pattern:
// L(w) + lambda * sum_{j in S} s_j w_j, with w zero off S.
struct Restricted {
  const GlmLoss& loss;
  double lambda;
  const std::vector<std::size_t>& set;
  const std::vector<double>& signs;

  double value(std::span<const double> w) const {
    double s = loss.value(w);
    for (std::size_t k = 0; k < set.size(); ++k) s += lambda * signs[k] * w[set[k]];
    return s;
  }
};

DenseMatrix restricted_hessian(const GlmLoss& loss, std::span<const double> w,
                               const std::vector<std::size_t>& set) {
  const std::size_t q = set.size();
  std::vector<long> pos(loss.p(), -1);
  for (std::size_t k = 0; k < q; ++k) pos[set[k]] = static_cast<long>(k);
  DenseMatrix h(q, q);
  const auto& a = loss.data().features;
  std::vector<std::size_t> idx;
  std::vector<double> val;
  for (std::size_t i = 0; i < loss.n(); ++i) {
    const double d = loss.link_curvature(loss.margin(i, w), loss.data().labels[i]);
    if (d == 0.0) continue;
    const auto r = a.row(i);
    idx.clear();
    val.clear();
    for (std::size_t t = 0; t < r.cols.size(); ++t) {
      const long k = pos[r.cols[t]];
      if (k < 0) continue;
      idx.push_back(static_cast<std::size_t>(k));
      val.push_back(r.values[t]);
    }
    for (std::size_t s = 0; s < idx.size(); ++s) {
      auto col = h.col(idx[s]);
      const double ds = d * val[s];
      for (std::size_t t = 0; t < idx.size(); ++t) col[idx[t]] += ds * val[t];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(loss.n());
  for (auto& v : h.values()) v *= inv_n;
  for (std::size_t k = 0; k < q; ++k) h(k, k) += loss.nu();
  return h;
}

// Newton iterations on the restricted objective; returns false when the
// line search cannot make progress.
bool restricted_newton(const Restricted& f, Vector& w) {
  const std::size_t q = f.set.size();
  if (q == 0) return true;
  double fw = f.value(w);
  for (int it = 0; it < 60; ++it) {
    const auto g_full = f.loss.full_gradient(w);
    Vector g(q);
    for (std::size_t k = 0; k < q; ++k) g[k] = g_full[f.set[k]] + f.lambda * f.signs[k];
    const double gn = nrm2(g);
    if (gn <= 1e-14) return true;
    DenseMatrix h = restricted_hessian(f.loss, w, f.set);
    Vector dir = g;
    try {
      cholesky_solve(cholesky(h), dir);
    } catch (const NotPositiveDefinite&) {
      return false;
    }
    const double slope = -dot(g, dir);
    if (!(slope < 0.0)) return gn <= 1e-12;
    double t = 1.0;
    Vector trial = w;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t k = 0; k < q; ++k) trial[f.set[k]] = w[f.set[k]] - t * dir[k];
      const double ft = f.value(trial);
      if (ft <= fw + 1e-4 * t * slope || (ft <= fw && t < 1e-3)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) return gn <= 1e-10;
    double step = 0.0;
    for (std::size_t k = 0; k < q; ++k) step = std::max(step, std::abs(trial[f.set[k]] - w[f.set[k]]));
    const double f_prev = fw;
    w.swap(trial);
    fw = f.value(w);
    if (step <= 1e-16 * std::max(1.0, nrm2(w)) || f_prev - fw <= 0.0) return true;
  }
  return true;
}

bool polish(const GlmLoss& loss, const Regularizer& reg, Vector& w) {
  constexpr std::size_t kMaxSupport = 2500;
  const double lambda = reg.kind() == RegularizerKind::l1 ? reg.lambda() : 0.0;
  const std::size_t p = loss.p();
  std::vector<std::size_t> set;
  std::vector<double> signs;
  if (reg.kind() == RegularizerKind::none) {
    set.resize(p);
    for (std::size_t j = 0; j < p; ++j) set[j] = j;
    signs.assign(p, 0.0);
  } else {
    for (std::size_t j = 0; j < p; ++j)
      if (w[j] != 0.0) {
        set.push_back(j);
        signs.push_back(w[j] > 0.0 ? 1.0 : -1.0);
      }
  }
  for (int round = 0; round < 30; ++round) {
    if (set.size() > kMaxSupport) return false;
    const Restricted f{loss, lambda, set, signs};
    if (!restricted_newton(f, w)) return false;
    if (reg.kind() == RegularizerKind::none) return true;

    bool changed = false;
    std::vector<std::size_t> keep_set;
    std::vector<double> keep_signs;
    for (std::size_t k = 0; k < set.size(); ++k) {
      const double v = w[set[k]];
      if (v == 0.0 || (v > 0.0) != (signs[k] > 0.0)) {
        w[set[k]] = 0.0;
        changed = true;
      } else {
        keep_set.push_back(set[k]);
        keep_signs.push_back(signs[k]);
      }
    }
    const auto g = loss.full_gradient(w);
    std::vector<char> in(p, 0);
    for (auto j : keep_set) in[j] = 1;
    for (std::size_t j = 0; j < p; ++j) {
      if (in[j]) continue;
      if (std::abs(g[j]) > lambda + 1e-10) {
        keep_set.push_back(j);
        keep_signs.push_back(g[j] > 0.0 ? -1.0 : 1.0);
        changed = true;
      }
    }
    if (!changed) return true;
    std::vector<std::size_t> order(keep_set.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return keep_set[x] < keep_set[y]; });
    set.clear();
    signs.clear();
    for (auto k : order) {
      set.push_back(keep_set[k]);
      signs.push_back(keep_signs[k]);
    }
  }
  return false;
}

}  // namespace

ReferenceSolution reference_solve(const GlmLoss& loss, const Regularizer& reg,
                                  const ReferenceOptions& options) {
  const std::size_t p = loss.p();
  if (loss.n() == 0) throw InvalidArgument("reference_solve: dataset has no samples");
  const auto start = Clock::now();
  const double step = std::min(1.0 / smoothness_bound(loss, 1.1), 0.5 * reg.max_prox_step());
  const bool accelerate = reg.is_convex();

  ReferenceSolution sol;
  Vector x(p, 0.0);
  Vector y = x;
  Vector x_new(p);
  double s = 1.0;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const auto g = loss.full_gradient(y);
    for (std::size_t j = 0; j < p; ++j) x_new[j] = y[j] - step * g[j];
    reg.prox_inplace(x_new, step);
    if (!all_finite(x_new)) throw NumericalError("reference_solve: non-finite iterate");
    double gm2 = 0.0;
    double restart_dot = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double d = y[j] - x_new[j];
      gm2 += d * d;
      restart_dot += d * (x_new[j] - x[j]);
    }
    sol.iterations = it + 1;
    if (accelerate && restart_dot > 0.0) s = 1.0;
    const double s_next = accelerate ? 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * s * s)) : 1.0;
    const double beta = accelerate ? (s - 1.0) / s_next : 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double d = x_new[j] - x[j];
      y[j] = x_new[j] + beta * d;
    }
    x.swap(x_new);
    s = s_next;
    if (std::sqrt(gm2) / step <= options.tol) break;
    if ((it & 63) == 0 && seconds_since(start) > options.max_seconds) break;
  }

  double best = objective(loss, reg, x);
  if (options.polish && reg.is_convex()) {
    Vector candidate = x;
    if (polish(loss, reg, candidate)) {
      const double value = objective(loss, reg, candidate);
      if (std::isfinite(value) && value <= best) {
        x.swap(candidate);
        best = value;
        sol.polished = true;
      }
    }
  }
  sol.objective = best;
  sol.grad_map_norm = gradient_mapping_norm(reg, x, loss.full_gradient(x));
  sol.w = std::move(x);
  return sol;
}

}  // namespace sapphire
