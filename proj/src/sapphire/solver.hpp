#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sapphire/linalg.hpp"
#include "sapphire/losses.hpp"
#include "sapphire/precond.hpp"
#include "sapphire/prox_solver.hpp"
#include "sapphire/regularizers.hpp"

namespace sapphire {

enum class SnapshotOption { average, last };

// How the outer step size is derived from curvature estimates.
enum class EtaRule {
  // alpha / lambda_hat.
  hessian,
  // alpha / L_P with the minibatch expected-smoothness constant
  // L_P = n(b-1)/(b(n-1)) * lambda_hat + (n-b)/(b(n-1)) * tau_hat.
  expected_smoothness,
};

/// Preconditioner refresh times, restricted to stage boundaries: every
/// stage during warm-up, then every `period` stages.
struct UpdateSchedule {
  std::size_t warmup_stages = 3;
  std::size_t period = 5;
  bool fires(std::size_t stage) const noexcept {
    if (stage < warmup_stages) return true;
    if (period == 0) return false;
    const std::size_t anchor = warmup_stages == 0 ? 0 : warmup_stages - 1;
    return (stage - anchor) % period == 0;
  }
};

struct Budget {
  double max_passes = 200.0;
  double max_seconds = 120.0;
  std::size_t max_stages = 100000;
};

/// Zero-valued sizes and rho mean "derive from the problem" (see resolve()).
struct SolverConfig {
  std::size_t b_g = 0;         // default ceil(sqrt(n))
  std::size_t b_h = 0;         // default ceil(sqrt(n))
  std::size_t nyssn_rank = 50;
  double rho = 0.0;            // default 1e-3 * trace(H_S) / p
  double alpha = 0.5;          // learning-rate multiplier
  std::size_t m = 0;           // default ceil(2n / b_g)
  UpdateSchedule schedule;
  SnapshotOption snapshot = SnapshotOption::last;
  PreconditionerKind precond = PreconditionerKind::ssn;
  EtaRule eta_rule = EtaRule::expected_smoothness;
  ApgOptions apg;
  std::uint64_t seed = 0;
  Budget budget;
  // Stop once the gradient-mapping norm at the snapshot drops below this.
  double tol = 0.0;
  double stall_rtol = 1e-14;
  std::size_t stall_stages = 5;
  // SAGA step is saga_step / L_max.
  double saga_step = 1.0 / 3.0;
  Vector w0;  // empty: start from zero

  void validate(std::size_t n) const;
  // Fills every derived default for a problem with n samples.
  SolverConfig resolve(std::size_t n) const;
};

struct TraceRecord {
  std::size_t stage = 0;
  std::uint64_t gradient_evaluations = 0;
  double effective_passes = 0.0;
  double wall_seconds = 0.0;
  double objective = 0.0;
  double grad_map_norm = 0.0;
  std::size_t support_size = 0;
  std::size_t apg_iters_total = 0;
  double eta = 0.0;
  bool rebuilt = false;
};

enum class Termination { budget, tolerance, stall, diverged };
const char* to_string(Termination t) noexcept;

struct SolverResult {
  Vector w_final;
  std::vector<TraceRecord> trace;
  Termination termination = Termination::budget;
  std::string message;
};

struct InnerStep {
  std::size_t stage;
  std::size_t k;
  std::span<const std::size_t> batch;
  std::span<const double> w_k;
  std::span<const double> snapshot;
  std::span<const double> snapshot_gradient;
  std::span<const double> v_k;
  std::span<const double> w_next;
};

struct SolverHooks {
  std::function<void(const InnerStep&)> on_inner_step;
  std::function<void(std::size_t stage, const Preconditioner&, double eta)> on_rebuild;
};

/// v = grad_S L(w_k) - grad_S L(snapshot) + snapshot_gradient, both
/// minibatch terms over the same batch.
Vector variance_reduced_gradient(const GlmLoss& loss, std::span<const double> w_k,
                                 std::span<const double> snapshot,
                                 std::span<const double> snapshot_gradient,
                                 std::span<const std::size_t> batch);

struct EtaEstimate {
  double eta = 0.0;
  double lambda_hat = 0.0;  // top eigenvalue of P^{-1/2}(H_S' + rho I)P^{-1/2}
  double tau_hat = 0.0;     // largest per-sample preconditioned curvature
  double smoothness = 0.0;  // constant that eta was derived from
  bool fallback = false;
};

/// Step size from a fresh Hessian batch. rho is the shift used for P
/// (ignored for the identity preconditioner).
EtaEstimate estimate_eta(const GlmLoss& loss, const Preconditioner& p,
                         std::span<const double> w,
                         std::span<const std::size_t> fresh_batch, double rho,
                         const SolverConfig& cfg, std::uint64_t seed);

// Objective R(w) = L(w) + r(w).
double objective(const GlmLoss& loss, const Regularizer& reg, std::span<const double> w);
// ||w - prox_{t r}(w - t grad)|| / t with a regime-safe t <= 1.
double gradient_mapping_norm(const Regularizer& reg, std::span<const double> w,
                             std::span<const double> grad);

SolverResult sapphire_run(const GlmLoss& loss, const Regularizer& reg,
                          const SolverConfig& cfg, const SolverHooks& hooks = {});
// sapphire_run with the identity metric.
SolverResult prox_svrg_run(const GlmLoss& loss, const Regularizer& reg,
                           const SolverConfig& cfg, const SolverHooks& hooks = {});

/// SAGA over GLM link derivatives: one scalar per sample is stored.
class SagaState {
 public:
  SagaState(const GlmLoss& loss, Vector w0);
  // One (minibatch) SAGA step; returns the direction v used.
  const Vector& step(std::span<const std::size_t> batch, double eta,
                     const Regularizer& reg);
  const Vector& w() const noexcept { return w_; }
  const Vector& table_mean() const noexcept { return mean_; }
  Vector recompute_table_mean() const;

 private:
  const GlmLoss& loss_;
  Vector w_;
  Vector table_;
  Vector mean_;
  Vector direction_;
};

SolverResult saga_run(const GlmLoss& loss, const Regularizer& reg,
                      const SolverConfig& cfg);

struct Suboptimality {
  double absolute = 0.0;
  double relative = 0.0;
  bool clipped = false;  // the raw gap was negative
};
Suboptimality compute_suboptimality(const GlmLoss& loss, const Regularizer& reg,
                                    std::span<const double> w,
                                    std::span<const double> reference);
Suboptimality suboptimality_from_values(double objective, double reference_objective);

struct ReferenceOptions {
  double tol = 1e-12;
  std::size_t max_iter = 200000;
  double max_seconds = 600.0;
  bool polish = true;
};

struct ReferenceSolution {
  Vector w;
  double objective = 0.0;
  double grad_map_norm = 0.0;
  std::size_t iterations = 0;
  bool polished = false;
};

/// High-accuracy full-batch solution: accelerated proximal gradient with
/// restarts, followed (convex l1/none) by a Newton polish on the support
/// that is kept only if it passes the optimality check.
ReferenceSolution reference_solve(const GlmLoss& loss, const Regularizer& reg,
                                  const ReferenceOptions& options = {});

}  // namespace sapphire
