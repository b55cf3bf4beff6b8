#include "sapphire/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sapphire/errors.hpp"

namespace sapphire {

Regularizer Regularizer::l1(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("l1: lambda must be > 0");
  return {RegularizerKind::l1, lambda, 0.0};
}

Regularizer Regularizer::scad(double lambda, double a) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("scad: lambda must be > 0");
  if (!(a > 2.0) || !std::isfinite(a)) throw InvalidArgument("scad: a must be > 2");
  return {RegularizerKind::scad, lambda, a};
}

Regularizer Regularizer::mcp(double lambda, double gamma) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw InvalidArgument("mcp: lambda must be > 0");
  if (!(gamma > 1.0) || !std::isfinite(gamma))
    throw InvalidArgument("mcp: gamma must be > 1");
  return {RegularizerKind::mcp, lambda, gamma};
}

std::string Regularizer::describe() const {
  char buf[96];
  switch (kind_) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::l1:
      std::snprintf(buf, sizeof buf, "l1(lambda=%g)", lambda_);
      return buf;
    case RegularizerKind::scad:
      std::snprintf(buf, sizeof buf, "scad(lambda=%g, a=%g)", lambda_, shape_);
      return buf;
    case RegularizerKind::mcp:
      std::snprintf(buf, sizeof buf, "mcp(lambda=%g, gamma=%g)", lambda_, shape_);
      return buf;
  }
  return "unknown";
}

double Regularizer::penalty(double w) const noexcept {
  const double x = std::abs(w);
  const double lam = lambda_;
  switch (kind_) {
    case RegularizerKind::none: return 0.0;
    case RegularizerKind::l1: return lam * x;
    case RegularizerKind::scad: {
      const double a = shape_;
      if (x <= lam) return lam * x;
      if (x < a * lam) return -(x * x - 2.0 * a * lam * x + lam * lam) / (2.0 * (a - 1.0));
      return (a + 1.0) * lam * lam / 2.0;
    }
    case RegularizerKind::mcp: {
      const double g = shape_;
      if (x <= g * lam) return lam * x - x * x / (2.0 * g);
      return g * lam * lam / 2.0;
    }
  }
  return 0.0;
}

double Regularizer::value(std::span<const double> w) const {
  if (kind_ == RegularizerKind::none) return 0.0;
  double s = 0.0;
  for (double v : w) s += penalty(v);
  return s;
}

double Regularizer::max_prox_step() const noexcept {
  switch (kind_) {
    case RegularizerKind::scad: return shape_ - 1.0;
    case RegularizerKind::mcp: return shape_;
    default: return std::numeric_limits<double>::infinity();
  }
}

// Minimizer over u >= 0 for x >= 0. Each branch's stationary point is
// clipped to its interval and the candidates are compared directly; ties
// go to the smaller |u|.
double Regularizer::prox_nonneg(double x, double t) const noexcept {
  const double lam = lambda_;
  switch (kind_) {
    case RegularizerKind::none: return x;
    case RegularizerKind::l1: return std::max(x - t * lam, 0.0);
    case RegularizerKind::scad: {
      const double a = shape_;
      const double c1 = std::clamp(x - t * lam, 0.0, lam);
      const double c2 = std::clamp(((a - 1.0) * x - t * a * lam) / (a - 1.0 - t), lam, a * lam);
      const double c3 = std::max(x, a * lam);
      double best = c1;
      double best_obj = t * penalty(c1) + 0.5 * (c1 - x) * (c1 - x);
      for (double c : {c2, c3}) {
        const double obj = t * penalty(c) + 0.5 * (c - x) * (c - x);
        if (obj < best_obj) {
          best = c;
          best_obj = obj;
        }
      }
      return best;
    }
    case RegularizerKind::mcp: {
      const double g = shape_;
      const double c1 = std::clamp(g * (x - t * lam) / (g - t), 0.0, g * lam);
      const double c2 = std::max(x, g * lam);
      const double o1 = t * penalty(c1) + 0.5 * (c1 - x) * (c1 - x);
      const double o2 = t * penalty(c2) + 0.5 * (c2 - x) * (c2 - x);
      return o2 < o1 ? c2 : c1;
    }
  }
  return x;
}

double Regularizer::prox_scalar(double x, double t) const {
  if (!(t > 0.0)) throw InvalidArgument("prox: step must be > 0");
  if (!(t < max_prox_step()))
    throw InvalidArgument("prox: step " + std::to_string(t) +
                          " outside the unique-minimizer regime of " + describe());
  const double u = prox_nonneg(std::abs(x), t);
  return x < 0.0 ? -u : u;
}

void Regularizer::prox_inplace(std::span<double> x, double t) const {
  if (!(t > 0.0)) throw InvalidArgument("prox: step must be > 0");
  if (!(t < max_prox_step()))
    throw InvalidArgument("prox: step " + std::to_string(t) +
                          " outside the unique-minimizer regime of " + describe());
  if (kind_ == RegularizerKind::none) return;
  for (auto& v : x) {
    const double u = prox_nonneg(std::abs(v), t);
    v = v < 0.0 ? -u : u;
  }
}

Vector Regularizer::prox(std::span<const double> x, double t) const {
  Vector out(x.begin(), x.end());
  prox_inplace(out, t);
  return out;
}

IndexArray support(std::span<const double> w, double tol) {
  if (!(tol >= 0.0)) throw InvalidArgument("support: tol must be >= 0");
  IndexArray out;
  for (std::size_t j = 0; j < w.size(); ++j)
    if (std::abs(w[j]) > tol) out.push_back(j);
  return out;
}

}  // namespace sapphire
