#pragma once

#include <limits>
#include <span>
#include <string>

#include "sapphire/linalg.hpp"

namespace sapphire {

enum class RegularizerKind { none, l1, scad, mcp };

/// Separable non-smooth penalty r(w) = sum_j penalty(w_j).
///
/// SCAD (lambda, a > 2):  lambda|w|                                 |w| <= lambda
///                        -(w^2 - 2 a lambda |w| + lambda^2)/(2(a-1))  lambda < |w| < a lambda
///                        (a+1) lambda^2 / 2                          |w| >= a lambda
/// MCP (lambda, gamma > 1): lambda|w| - w^2/(2 gamma)   |w| <= gamma lambda
///                          gamma lambda^2 / 2          otherwise
class Regularizer {
 public:
  Regularizer() = default;  // none

  static Regularizer none() { return {}; }
  static Regularizer l1(double lambda);
  static Regularizer scad(double lambda, double a);
  static Regularizer mcp(double lambda, double gamma);

  RegularizerKind kind() const noexcept { return kind_; }
  double lambda() const noexcept { return lambda_; }
  // a for SCAD, gamma for MCP, unused otherwise.
  double shape() const noexcept { return shape_; }
  bool is_convex() const noexcept {
    return kind_ == RegularizerKind::none || kind_ == RegularizerKind::l1;
  }
  std::string describe() const;

  double penalty(double w) const noexcept;
  double value(std::span<const double> w) const;

  // Largest prox step for which the scalar prox objective is strictly
  // convex (unique minimizer); infinite for convex penalties.
  double max_prox_step() const noexcept;

  // argmin_u t*penalty(u) + (u - x)^2 / 2. Throws outside the unique
  // minimizer regime.
  double prox_scalar(double x, double t) const;
  Vector prox(std::span<const double> x, double t) const;
  void prox_inplace(std::span<double> x, double t) const;

 private:
  Regularizer(RegularizerKind k, double lambda, double shape)
      : kind_(k), lambda_(lambda), shape_(shape) {}
  double prox_nonneg(double x, double t) const noexcept;

  RegularizerKind kind_ = RegularizerKind::none;
  double lambda_ = 0.0;
  double shape_ = 0.0;
};

// Indices with |w_j| > tol, ascending.
IndexArray support(std::span<const double> w, double tol);

}  // namespace sapphire
