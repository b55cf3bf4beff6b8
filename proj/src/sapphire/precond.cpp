#include "sapphire/precond.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sapphire/errors.hpp"
#include "sapphire/rng.hpp"

namespace sapphire {

namespace {

constexpr double kPowerTol = 1e-6;
constexpr std::size_t kPowerMaxIter = 100;
constexpr double kDenseThreshold = 0.25;

void check_len(std::span<const double> v, std::size_t n, const char* where) {
  if (v.size() != n) throw DimensionMismatch(where, n, v.size());
}

double sparse_row_dot(const SparseRowMatrix::RowView& a,
                      const SparseRowMatrix::RowView& b) {
  double s = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.cols.size() && j < b.cols.size()) {
    if (a.cols[i] == b.cols[j]) {
      s += a.values[i] * b.values[j];
      ++i;
      ++j;
    } else if (a.cols[i] < b.cols[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

}  // namespace

const char* to_string(PreconditionerKind kind) noexcept {
  switch (kind) {
    case PreconditionerKind::identity: return "identity";
    case PreconditionerKind::ssn: return "ssn";
    case PreconditionerKind::nyssn: return "nyssn";
  }
  return "unknown";
}

Vector Preconditioner::apply(std::span<const double> v) const {
  Vector out(dim());
  apply(v, out);
  return out;
}

Vector Preconditioner::solve(std::span<const double> v) const {
  Vector out(dim());
  solve(v, out);
  return out;
}

IdentityPreconditioner::IdentityPreconditioner(std::size_t dim, double scale)
    : dim_(dim), scale_(scale) {
  if (!(scale > 0.0)) throw InvalidArgument("IdentityPreconditioner: scale must be > 0");
}

void IdentityPreconditioner::apply(std::span<const double> v,
                                   std::span<double> out) const {
  check_len(v, dim_, "IdentityPreconditioner::apply");
  for (std::size_t i = 0; i < dim_; ++i) out[i] = scale_ * v[i];
}

void IdentityPreconditioner::solve(std::span<const double> v,
                                   std::span<double> out) const {
  check_len(v, dim_, "IdentityPreconditioner::solve");
  for (std::size_t i = 0; i < dim_; ++i) out[i] = v[i] / scale_;
}

HessianSketchFactor::HessianSketchFactor(const GlmLoss& loss,
                                         std::span<const double> w,
                                         std::span<const std::size_t> batch)
    : rows_(batch.size()), cols_(loss.p()) {
  if (batch.empty()) throw InvalidArgument("Hessian batch must be nonempty");
  const auto weights = loss.hessian_weights(w, batch);
  const auto& a = loss.data().features;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Vector scale(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    scale[k] = std::sqrt(weights[k] * inv_b);
    trace_ += weights[k] * inv_b * a.row_squared_norm(batch[k]);
  }
  const double cells = static_cast<double>(a.rows()) * static_cast<double>(a.cols());
  const double density = cells > 0 ? static_cast<double>(a.nnz()) / cells : 0.0;
  if (density > kDenseThreshold) {
    DenseMatrix bt(cols_, rows_);
    for (std::size_t k = 0; k < rows_; ++k) {
      const auto r = a.row(batch[k]);
      auto col = bt.col(k);
      for (std::size_t t = 0; t < r.cols.size(); ++t) col[r.cols[t]] = scale[k] * r.values[t];
    }
    store_ = std::move(bt);
  } else {
    store_ = a.select_rows(batch).scale_rows(scale);
  }
}

Vector HessianSketchFactor::times(std::span<const double> v) const {
  check_len(v, cols_, "HessianSketchFactor::times");
  if (const auto* d = std::get_if<DenseMatrix>(&store_)) return gemv_t(*d, v);
  return spmv(std::get<SparseRowMatrix>(store_), v);
}

Vector HessianSketchFactor::transpose_times(std::span<const double> u) const {
  check_len(u, rows_, "HessianSketchFactor::transpose_times");
  if (const auto* d = std::get_if<DenseMatrix>(&store_)) return gemv(*d, u);
  return spmv_t(std::get<SparseRowMatrix>(store_), u);
}

void HessianSketchFactor::gram_apply(std::span<const double> v,
                                     std::span<double> out) const {
  const auto bt = transpose_times(times(v));
  std::copy(bt.begin(), bt.end(), out.begin());
}

DenseMatrix HessianSketchFactor::outer_gram() const {
  if (const auto* d = std::get_if<DenseMatrix>(&store_)) return matmul_tn(*d, *d);
  const auto& s = std::get<SparseRowMatrix>(store_);
  DenseMatrix k(rows_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = sparse_row_dot(s.row(i), s.row(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  return k;
}

DenseMatrix HessianSketchFactor::inner_gram() const {
  DenseMatrix b;
  if (const auto* d = std::get_if<DenseMatrix>(&store_))
    b = d->transposed();
  else
    b = std::get<SparseRowMatrix>(store_).to_dense();
  return matmul_tn(b, b);
}

SsnPreconditioner::SsnPreconditioner(HessianSketchFactor factor, double sigma,
                                     std::uint64_t seed)
    : factor_(std::move(factor)), sigma_(sigma) {
  if (!(sigma_ > 0.0)) throw NotPositiveDefinite(0);
  const std::size_t b = factor_.rows();
  const std::size_t p = factor_.cols();
  DenseMatrix gram;
  if (b < p) {
    // The nonzero spectrum of B^T B equals that of the small Gram B B^T.
    gram = factor_.outer_gram();
  } else {
    gram = factor_.inner_gram();
  }
  const auto pw = power_iteration(
      [&gram](std::span<const double> x, std::span<double> y) {
        const auto gx = gemv(gram, x);
        std::copy(gx.begin(), gx.end(), y.begin());
      },
      gram.rows(), kPowerTol, kPowerMaxIter, seed);
  lambda_max_ = pw.value + sigma_;
  lambda_converged_ = pw.converged;
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += sigma_;
  chol_ = cholesky(gram);
  if (b >= p) dense_p_ = std::move(gram);
}

void SsnPreconditioner::apply(std::span<const double> v,
                              std::span<double> out) const {
  check_len(v, dim(), "SsnPreconditioner::apply");
  if (!dense_p_.empty()) {
    const auto pv = gemv(dense_p_, v);
    std::copy(pv.begin(), pv.end(), out.begin());
    return;
  }
  const auto bt = factor_.transpose_times(factor_.times(v));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = bt[i] + sigma_ * v[i];
}

void SsnPreconditioner::solve(std::span<const double> v,
                              std::span<double> out) const {
  check_len(v, dim(), "SsnPreconditioner::solve");
  if (!dense_p_.empty()) {
    std::copy(v.begin(), v.end(), out.begin());
    cholesky_solve(chol_, out);
    return;
  }
  // (sigma I + B^T B)^{-1} v = (v - B^T (sigma I + B B^T)^{-1} B v) / sigma
  auto u = factor_.times(v);
  cholesky_solve(chol_, u);
  const auto t = factor_.transpose_times(u);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - t[i]) / sigma_;
}

NystromApproximation rand_nys_approx(const LinearOperator& hvp, std::size_t p,
                                     std::size_t r, std::uint64_t seed) {
  if (r == 0 || r > p) throw InvalidArgument("rand_nys_approx: need 1 <= r <= p");
  Rng rng(seed);
  DenseMatrix omega(p, r);
  for (auto& x : omega.values()) x = rng.normal();
  omega = householder_qr(omega).q;

  DenseMatrix sketch(p, r);
  for (std::size_t j = 0; j < r; ++j) hvp(omega.col(j), sketch.col(j));

  const auto gram_eig = symmetric_eigen(matmul_tn(sketch, sketch));
  const double sigma_max = std::sqrt(std::max(0.0, gram_eig.values.front()));
  if (sigma_max == 0.0) return {std::move(omega), Vector(r, 0.0), 0.0};

  double shift = std::sqrt(static_cast<double>(p)) *
                 (std::nextafter(sigma_max, std::numeric_limits<double>::infinity()) -
                  sigma_max);
  DenseMatrix shifted;
  DenseMatrix chol;
  for (int attempt = 0;; ++attempt) {
    shifted = sketch;
    for (std::size_t j = 0; j < r; ++j) axpy(shift, omega.col(j), shifted.col(j));
    DenseMatrix core = matmul_tn(omega, shifted);
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t i = j + 1; i < r; ++i) {
        const double avg = 0.5 * (core(i, j) + core(j, i));
        core(i, j) = avg;
        core(j, i) = avg;
      }
    try {
      chol = cholesky(core);
      break;
    } catch (const NotPositiveDefinite&) {
      if (attempt >= 1) throw;
      shift *= 10.0;
    }
  }

  // B = M_shift C^{-T}: each row b of B solves C b^T = m^T.
  DenseMatrix rows_t = shifted.transposed();  // r x p
  for (std::size_t i = 0; i < p; ++i) solve_lower(chol, rows_t.col(i));
  const auto svd = thin_svd(rows_t.transposed());

  NystromApproximation out{svd.u, Vector(r), shift};
  for (std::size_t j = 0; j < r; ++j) out.lambda[j] = std::max(0.0, svd.s[j] * svd.s[j] - shift);
  return out;
}

NyssnPreconditioner::NyssnPreconditioner(NystromApproximation approx, double sigma)
    : approx_(std::move(approx)), sigma_(sigma) {
  if (!(sigma_ > 0.0)) throw NotPositiveDefinite(0);
}

void NyssnPreconditioner::apply(std::span<const double> v,
                                std::span<double> out) const {
  check_len(v, dim(), "NyssnPreconditioner::apply");
  auto c = gemv_t(approx_.v, v);
  for (std::size_t j = 0; j < c.size(); ++j) c[j] *= approx_.lambda[j];
  const auto low = gemv(approx_.v, c);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = low[i] + sigma_ * v[i];
}

void NyssnPreconditioner::solve(std::span<const double> v,
                                std::span<double> out) const {
  check_len(v, dim(), "NyssnPreconditioner::solve");
  // V (Lambda + sigma)^{-1} V^T v + (v - V V^T v) / sigma
  auto c = gemv_t(approx_.v, v);
  for (std::size_t j = 0; j < c.size(); ++j)
    c[j] *= 1.0 / (approx_.lambda[j] + sigma_) - 1.0 / sigma_;
  const auto low = gemv(approx_.v, c);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = low[i] + v[i] / sigma_;
}

double NyssnPreconditioner::lambda_max() const noexcept {
  return (approx_.lambda.empty() ? 0.0 : approx_.lambda.front()) + sigma_;
}

double default_rho(const HessianSketchFactor& factor) {
  const double rho = 1e-3 * factor.trace() / static_cast<double>(factor.cols());
  return rho > 0.0 ? rho : 1e-8;
}

std::unique_ptr<SsnPreconditioner> build_ssn(const GlmLoss& loss,
                                             std::span<const double> w,
                                             std::span<const std::size_t> batch,
                                             double rho, std::uint64_t seed) {
  if (!(rho > 0.0)) throw InvalidArgument("build_ssn: rho must be > 0");
  return std::make_unique<SsnPreconditioner>(HessianSketchFactor(loss, w, batch),
                                             rho + loss.nu(), seed);
}

std::unique_ptr<NyssnPreconditioner> build_nyssn(
    const GlmLoss& loss, std::span<const double> w,
    std::span<const std::size_t> batch, std::size_t rank, double rho,
    std::uint64_t seed) {
  if (!(rho > 0.0)) throw InvalidArgument("build_nyssn: rho must be > 0");
  const HessianSketchFactor factor(loss, w, batch);
  const std::size_t r = std::min(rank, loss.p());
  auto approx = rand_nys_approx(
      [&factor](std::span<const double> x, std::span<double> y) { factor.gram_apply(x, y); },
      loss.p(), r, seed);
  return std::make_unique<NyssnPreconditioner>(std::move(approx), rho + loss.nu());
}

PowerIterationResult generalized_power_iteration(const LinearOperator& h,
                                                 const Preconditioner& p,
                                                 double tol,
                                                 std::size_t max_iter,
                                                 std::uint64_t seed) {
  const std::size_t dim = p.dim();
  PowerIterationResult res;
  if (dim == 0) {
    res.converged = true;
    return res;
  }
  Rng rng(seed);
  Vector x(dim);
  rng.fill_normal(x);
  {
    // Normalize in the P-norm.
    const auto px = p.apply(x);
    scal(1.0 / std::sqrt(dot(x, px)), x);
  }
  Vector y(dim);
  Vector z(dim);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    std::fill(y.begin(), y.end(), 0.0);
    h(x, y);
    const double lambda = dot(x, y);
    p.solve(y, z);
    const double yz = dot(y, z);  // ||y||_{P^{-1}}^2
    res.value = lambda;
    res.iterations = it;
    const double resid = std::sqrt(std::max(0.0, yz - lambda * lambda));
    if (yz <= 0.0 || resid <= tol * std::abs(lambda)) {
      res.converged = true;
      return res;
    }
    const double znorm = std::sqrt(yz);  // ||z||_P = sqrt(z^T y)
    for (std::size_t i = 0; i < dim; ++i) x[i] = z[i] / znorm;
  }
  return res;
}

DenseMatrix dense_hessian(const GlmLoss& loss, std::span<const double> w) {
  const std::size_t p = loss.p();
  const std::size_t n = loss.n();
  DenseMatrix h(p, p);
  const auto& a = loss.data().features;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = loss.link_curvature(loss.margin(i, w), loss.data().labels[i]);
    if (d == 0.0) continue;
    const auto r = a.row(i);
    for (std::size_t s = 0; s < r.cols.size(); ++s)
      for (std::size_t t = 0; t < r.cols.size(); ++t)
        h(r.cols[s], r.cols[t]) += d * r.values[s] * r.values[t];
  }
  const double inv_n = n == 0 ? 0.0 : 1.0 / static_cast<double>(n);
  for (auto& v : h.values()) v *= inv_n;
  for (std::size_t j = 0; j < p; ++j) h(j, j) += loss.nu();
  return h;
}

DenseMatrix dense_operator(const Preconditioner& p) {
  const std::size_t n = p.dim();
  DenseMatrix m(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    p.apply(e, m.col(j));
    e[j] = 0.0;
  }
  return m;
}

double effective_dimension(std::span<const double> eigenvalues, double beta) {
  double s = 0.0;
  for (double l : eigenvalues) {
    const double lp = std::max(0.0, l);
    s += lp / (lp + beta);
  }
  return s;
}

namespace {

// Largest root of 1 = c * sum_j u_j^2 / (lambda - delta_j), i.e. the top
// eigenvalue of diag(delta) + c u u^T.
double diag_plus_rank_one_max(std::span<const double> delta,
                              std::span<const double> u, double c) {
  double dmax = -std::numeric_limits<double>::infinity();
  for (double d : delta) dmax = std::max(dmax, d);
  double unorm2 = 0.0;
  for (double x : u) unorm2 += x * x;
  if (c * unorm2 <= 0.0) return dmax;
  double lo = dmax;
  double hi = dmax + c * unorm2;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::abs(hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    double s = 0.0;
    for (std::size_t j = 0; j < delta.size(); ++j) s += u[j] * u[j] / (mid - delta[j]);
    if (1.0 - c * s < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

}  // namespace

SpectralReport spectral_report(const GlmLoss& loss, std::span<const double> w,
                               const Preconditioner& p, double rho) {
  const std::size_t dim = loss.p();
  if (dim > kMaxSpectralDim)
    throw InvalidArgument("spectral_report: dimension too large for dense diagnostics");
  if (p.dim() != dim) throw DimensionMismatch("spectral_report", dim, p.dim());
  if (!(rho >= 0.0)) throw InvalidArgument("spectral_report: rho must be >= 0");

  SpectralReport rep;
  rep.at_rho = rho;
  const DenseMatrix h = dense_hessian(loss, w);
  DenseMatrix h_rho = h;
  for (std::size_t j = 0; j < dim; ++j) h_rho(j, j) += rho;

  // zeta: spectrum of L^{-1} (H + rho I) L^{-T} with P = L L^T.
  const DenseMatrix l = cholesky(dense_operator(p));
  DenseMatrix m = h_rho;
  for (std::size_t j = 0; j < dim; ++j) solve_lower(l, m.col(j));
  m = m.transposed();
  for (std::size_t j = 0; j < dim; ++j) solve_lower(l, m.col(j));
  const auto pe = symmetric_eigen(m);
  rep.precond_lambda_max = pe.values.front();
  rep.precond_lambda_min = pe.values.back();
  rep.zeta = std::max(rep.precond_lambda_max - 1.0, 1.0 - rep.precond_lambda_min);

  const auto he = symmetric_eigen(h);
  rep.d_eff = effective_dimension(he.values, rho);

  // tau: for each sample, top eigenvalue of
  // K^{-1/2} (d_i a a^T + (nu + rho) I) K^{-1/2} with K = H + rho I.
  Vector kappa(dim);
  for (std::size_t j = 0; j < dim; ++j) kappa[j] = he.values[j] + rho;
  Vector delta(dim);
  for (std::size_t j = 0; j < dim; ++j) delta[j] = (loss.nu() + rho) / kappa[j];
  const auto& a = loss.data().features;
  double tau = 0.0;
  Vector dense_row(dim);
  for (std::size_t i = 0; i < loss.n(); ++i) {
    const double d = loss.link_curvature(loss.margin(i, w), loss.data().labels[i]);
    std::fill(dense_row.begin(), dense_row.end(), 0.0);
    const auto r = a.row(i);
    for (std::size_t k = 0; k < r.cols.size(); ++k) dense_row[r.cols[k]] = r.values[k];
    auto u = gemv_t(he.vectors, dense_row);
    for (std::size_t j = 0; j < dim; ++j) u[j] /= std::sqrt(kappa[j]);
    tau = std::max(tau, diag_plus_rank_one_max(delta, u, d));
  }
  rep.tau = loss.n() == 0 ? 1.0 : tau;
  return rep;
}

}  // namespace sapphire
