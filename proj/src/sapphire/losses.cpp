#include "sapphire/losses.hpp"

#include <cmath>
#include <numeric>

#include "sapphire/errors.hpp"

namespace sapphire {

GlmLoss::GlmLoss(LossKind kind, std::shared_ptr<const Dataset> data, double nu)
    : kind_(kind), data_(std::move(data)), nu_(nu) {
  if (!data_) throw InvalidArgument("GlmLoss: dataset is null");
  if (!(nu_ >= 0.0) || !std::isfinite(nu_))
    throw InvalidArgument("GlmLoss: ridge nu must be finite and >= 0");
  if (kind_ == LossKind::logistic && data_->kind != LabelKind::binary)
    throw InvalidArgument("GlmLoss: logistic loss requires binary labels");
}

double GlmLoss::link(double z, double y) const noexcept {
  if (kind_ == LossKind::squared) {
    const double r = z - y;
    return 0.5 * r * r;
  }
  // log(1 + exp(-yz)) without overflow.
  const double m = -y * z;
  return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

double GlmLoss::link_derivative(double z, double y) const noexcept {
  if (kind_ == LossKind::squared) return z - y;
  // -y * sigmoid(-y z)
  const double m = -y * z;
  const double s = m >= 0.0 ? 1.0 / (1.0 + std::exp(-m))
                            : std::exp(m) / (1.0 + std::exp(m));
  return -y * s;
}

double GlmLoss::link_curvature(double z, double /*y*/) const noexcept {
  if (kind_ == LossKind::squared) return 1.0;
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

double GlmLoss::max_link_curvature() const noexcept {
  return kind_ == LossKind::squared ? 1.0 : 0.25;
}

void GlmLoss::check_dim(std::span<const double> w, const char* where) const {
  if (w.size() != p()) throw DimensionMismatch(where, p(), w.size());
}

double GlmLoss::value(std::span<const double> w) const {
  check_dim(w, "GlmLoss::value");
  const auto& d = *data_;
  double sum = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) sum += link(margin(i, w), d.labels[i]);
  const double mean = d.n() == 0 ? 0.0 : sum / static_cast<double>(d.n());
  return mean + 0.5 * nu_ * dot(w, w);
}

GradientEstimate GlmLoss::minibatch_gradient(
    std::span<const double> w, std::span<const std::size_t> batch) const {
  check_dim(w, "GlmLoss::minibatch_gradient");
  if (batch.empty()) throw InvalidArgument("minibatch_gradient: empty batch");
  const auto& d = *data_;
  GradientEstimate g;
  g.vector.assign(p(), 0.0);
  for (auto i : batch) {
    if (i >= d.n()) throw InvalidArgument("minibatch_gradient: index out of range");
    const double c = link_derivative(margin(i, w), d.labels[i]);
    if (c != 0.0) d.features.row_axpy(i, c, g.vector);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < p(); ++j) g.vector[j] = g.vector[j] * inv_b + nu_ * w[j];
  g.batch_indices.assign(batch.begin(), batch.end());
  g.is_full = batch.size() == d.n();
  return g;
}

Vector GlmLoss::full_gradient(std::span<const double> w) const {
  if (n() == 0) {
    check_dim(w, "GlmLoss::full_gradient");
    Vector g(w.begin(), w.end());
    scal(nu_, g);
    return g;
  }
  const auto all = all_indices();
  return minibatch_gradient(w, all).vector;
}

Vector GlmLoss::sample_gradient(std::size_t i, std::span<const double> w) const {
  const std::size_t one[1] = {i};
  return minibatch_gradient(w, one).vector;
}

Vector GlmLoss::hessian_weights(std::span<const double> w,
                                std::span<const std::size_t> batch) const {
  check_dim(w, "GlmLoss::hessian_weights");
  Vector out;
  out.reserve(batch.size());
  for (auto i : batch) {
    if (i >= n()) throw InvalidArgument("hessian_weights: index out of range");
    out.push_back(link_curvature(margin(i, w), data_->labels[i]));
  }
  return out;
}

Vector GlmLoss::subsampled_hvp(std::span<const double> w,
                               std::span<const std::size_t> batch,
                               std::span<const double> v) const {
  check_dim(v, "GlmLoss::subsampled_hvp");
  if (batch.empty()) throw InvalidArgument("subsampled_hvp: empty batch");
  const auto weights = hessian_weights(w, batch);
  const auto& a = data_->features;
  Vector out(p(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const double c = weights[k] * a.row_dot(batch[k], v);
    if (c != 0.0) a.row_axpy(batch[k], c, out);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < p(); ++j) out[j] = out[j] * inv_b + nu_ * v[j];
  return out;
}

IndexArray GlmLoss::all_indices() const {
  IndexArray idx(n());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace sapphire
