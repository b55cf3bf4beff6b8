#pragma once

#include <memory>
#include <span>

#include "sapphire/data.hpp"
#include "sapphire/linalg.hpp"

namespace sapphire {

enum class LossKind { squared, logistic };

struct GradientEstimate {
  Vector vector;
  IndexArray batch_indices;
  bool is_full = false;
};

/// Smooth part L(w) = (1/n) sum_i phi(a_i^T w, y_i) + (nu/2)||w||^2 of a
/// generalized linear model. Everything is expressed through the scalar
/// link derivatives phi', phi''.
class GlmLoss {
 public:
  GlmLoss(LossKind kind, std::shared_ptr<const Dataset> data, double nu);

  LossKind kind() const noexcept { return kind_; }
  const Dataset& data() const noexcept { return *data_; }
  const std::shared_ptr<const Dataset>& data_ptr() const noexcept { return data_; }
  double nu() const noexcept { return nu_; }
  std::size_t n() const noexcept { return data_->n(); }
  std::size_t p() const noexcept { return data_->p(); }

  double link(double z, double y) const noexcept;
  double link_derivative(double z, double y) const noexcept;
  double link_curvature(double z, double y) const noexcept;
  // Upper bound on link_curvature over all z.
  double max_link_curvature() const noexcept;

  double margin(std::size_t i, std::span<const double> w) const {
    return data_->features.row_dot(i, w);
  }

  double value(std::span<const double> w) const;
  Vector full_gradient(std::span<const double> w) const;
  GradientEstimate minibatch_gradient(std::span<const double> w,
                                      std::span<const std::size_t> batch) const;
  // Gradient of l_i including the ridge term.
  Vector sample_gradient(std::size_t i, std::span<const double> w) const;

  // d_i = phi''(a_i^T w, y_i) for i in batch.
  Vector hessian_weights(std::span<const double> w,
                         std::span<const std::size_t> batch) const;
  // (1/|S|) A_S^T diag(d) A_S v + nu v.
  Vector subsampled_hvp(std::span<const double> w,
                        std::span<const std::size_t> batch,
                        std::span<const double> v) const;

  IndexArray all_indices() const;

 private:
  void check_dim(std::span<const double> w, const char* where) const;

  LossKind kind_;
  std::shared_ptr<const Dataset> data_;
  double nu_;
};

}  // namespace sapphire
