#include "sapphire/prox_solver.hpp"

#include <cmath>

#include "sapphire/errors.hpp"

namespace sapphire {

namespace {

void validate(const ScaledProxProblem& prob) {
  if (!prob.precond || !prob.reg) throw InvalidArgument("scaled_prox: missing P or r");
  const std::size_t p = prob.precond->dim();
  if (prob.w_k.size() != p) throw DimensionMismatch("scaled_prox w_k", p, prob.w_k.size());
  if (prob.v_k.size() != p) throw DimensionMismatch("scaled_prox v_k", p, prob.v_k.size());
  if (!(prob.eta > 0.0) || !std::isfinite(prob.eta))
    throw InvalidArgument("scaled_prox: eta must be > 0");
}

}  // namespace

double scaled_prox_objective(const ScaledProxProblem& prob,
                             std::span<const double> x) {
  validate(prob);
  const std::size_t p = x.size();
  Vector d(p);
  for (std::size_t i = 0; i < p; ++i) d[i] = x[i] - prob.w_k[i];
  const auto pd = prob.precond->apply(d);
  return prob.eta * prob.reg->value(x) + prob.eta * dot(prob.v_k, d) + 0.5 * dot(d, pd);
}

double apg_step(const ScaledProxProblem& prob, const ApgOptions& options) {
  const double lmax = prob.precond->lambda_max();
  if (options.strict_paper) return 1.0 / (lmax + options.strict_rho);
  double alpha = 1.0 / lmax;
  if (!prob.precond->lambda_max_converged()) alpha *= 0.9;
  return alpha;
}

ApgResult scaled_prox(const ScaledProxProblem& prob, const ApgOptions& options) {
  validate(prob);
  if (!(options.tol > 0.0)) throw InvalidArgument("scaled_prox: tol must be > 0");
  if (options.t_max < 1) throw InvalidArgument("scaled_prox: t_max must be >= 1");

  const auto& P = *prob.precond;
  const auto& reg = *prob.reg;
  const std::size_t p = P.dim();
  const double eta = prob.eta;
  ApgResult res;

  if (options.use_closed_forms && reg.kind() == RegularizerKind::none) {
    const auto step = P.solve(prob.v_k);
    res.solution.resize(p);
    for (std::size_t i = 0; i < p; ++i) res.solution[i] = prob.w_k[i] - eta * step[i];
    res.converged = true;
    if (!all_finite(res.solution)) throw NumericalError("scaled_prox: non-finite solution");
    return res;
  }
  if (options.use_closed_forms && P.is_scaled_identity()) {
    const double t = eta / P.shift();
    res.solution.resize(p);
    for (std::size_t i = 0; i < p; ++i) res.solution[i] = prob.w_k[i] - t * prob.v_k[i];
    reg.prox_inplace(res.solution, t);
    res.iterations = 1;
    res.converged = true;
    if (!all_finite(res.solution)) throw NumericalError("scaled_prox: non-finite solution");
    return res;
  }

  const double alpha = apg_step(prob, options);
  const double prox_step = alpha * eta;
  if (!(prox_step < reg.max_prox_step()))
    throw InvalidArgument("scaled_prox: prox step outside the regularizer's regime");
  const bool restart = options.restart && !options.strict_paper;

  // Iterates and their images P(. - w_k); linearity lets us form P(y - w_k)
  // without another apply.
  Vector x(prob.w_k.begin(), prob.w_k.end());
  Vector y = x;
  Vector pdx(p, 0.0);
  Vector pdy(p, 0.0);
  Vector x_new(p);
  Vector pd_new(p);
  Vector d(p);
  double f_x = eta * reg.value(x);
  double s = 1.0;
  bool momentum = false;

  for (std::size_t t = 0; t < options.t_max; ++t) {
    const auto& pd_grad = options.strict_paper ? pdx : pdy;
    for (std::size_t i = 0; i < p; ++i)
      x_new[i] = y[i] - alpha * (eta * prob.v_k[i] + pd_grad[i]);
    reg.prox_inplace(x_new, prox_step);
    for (std::size_t i = 0; i < p; ++i) d[i] = x_new[i] - prob.w_k[i];
    P.apply(d, pd_new);
    const double f_new = eta * reg.value(x_new) + eta * dot(prob.v_k, d) + 0.5 * dot(d, pd_new);
    if (!std::isfinite(f_new) || !all_finite(x_new))
      throw NumericalError("scaled_prox: non-finite iterate");
    ++res.iterations;

    if (restart && momentum && f_new > f_x) {
      // Drop the momentum and retry from x with a plain proximal step.
      s = 1.0;
      y = x;
      pdy = pdx;
      momentum = false;
      ++res.restarts;
      continue;
    }

    const double s_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * s * s));
    const double beta = (s - 1.0) / s_next;
    double diff2 = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const double dx = x_new[i] - x[i];
      diff2 += dx * dx;
      y[i] = x_new[i] + beta * dx;
      pdy[i] = pd_new[i] + beta * (pd_new[i] - pdx[i]);
    }
    x.swap(x_new);
    pdx.swap(pd_new);
    f_x = f_new;
    s = s_next;
    momentum = beta != 0.0;

    res.fixed_point_residual = std::sqrt(diff2);
    if (res.fixed_point_residual <= options.tol * std::max(1.0, nrm2(x))) {
      res.converged = true;
      break;
    }
  }
  res.solution = std::move(x);
  return res;
}

}  // namespace sapphire
