#pragma once

#include <cstddef>
#include <span>

#include "sapphire/linalg.hpp"
#include "sapphire/precond.hpp"
#include "sapphire/regularizers.hpp"

namespace sapphire {

/// min_w  eta r(w) + <eta v, w - w_k> + 1/2 ||w - w_k||_P^2
struct ScaledProxProblem {
  const Preconditioner* precond = nullptr;
  const Regularizer* reg = nullptr;
  std::span<const double> w_k;
  std::span<const double> v_k;
  double eta = 0.0;
};

struct ApgOptions {
  double tol = 1e-10;
  std::size_t t_max = 500;
  // Function-value restart; keeps the returned objective <= F(x0).
  bool restart = true;
  // Literal printed variant: step 1/(lambda_1(P) + rho) and the metric
  // term evaluated at x_t instead of y_t. Implies restart = false.
  bool strict_paper = false;
  double strict_rho = 0.0;
  // Use exact solutions when they exist (P = sigma I, or r = none).
  bool use_closed_forms = true;
};

struct ApgResult {
  Vector solution;
  std::size_t iterations = 0;
  double fixed_point_residual = 0.0;
  bool converged = false;
  std::size_t restarts = 0;
};

double scaled_prox_objective(const ScaledProxProblem& prob,
                             std::span<const double> x);

// Step size used by the APG iteration for this problem.
double apg_step(const ScaledProxProblem& prob, const ApgOptions& options);

ApgResult scaled_prox(const ScaledProxProblem& prob,
                      const ApgOptions& options = {});

}  // namespace sapphire
