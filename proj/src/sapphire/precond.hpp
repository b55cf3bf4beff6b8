#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <variant>

#include "sapphire/linalg.hpp"
#include "sapphire/losses.hpp"

namespace sapphire {

enum class PreconditionerKind { identity, ssn, nyssn };

const char* to_string(PreconditionerKind kind) noexcept;

/// Symmetric positive definite metric P used by the scaled proximal step.
/// Immutable after construction; apply/solve are thread-safe.
class Preconditioner {
 public:
  virtual ~Preconditioner() = default;

  virtual PreconditionerKind kind() const noexcept = 0;
  virtual std::size_t dim() const noexcept = 0;
  // Constant diagonal shift sigma (P = low-rank/PSD part + sigma I).
  virtual double shift() const noexcept = 0;
  virtual void apply(std::span<const double> v, std::span<double> out) const = 0;
  virtual void solve(std::span<const double> v, std::span<double> out) const = 0;
  virtual double lambda_max() const noexcept = 0;
  // False when lambda_max came from a power iteration that ran out of budget.
  virtual bool lambda_max_converged() const noexcept { return true; }
  // True when P = shift() * I exactly.
  virtual bool is_scaled_identity() const noexcept { return false; }

  Vector apply(std::span<const double> v) const;
  Vector solve(std::span<const double> v) const;
};

/// P = scale * I.
class IdentityPreconditioner final : public Preconditioner {
 public:
  explicit IdentityPreconditioner(std::size_t dim, double scale = 1.0);
  PreconditionerKind kind() const noexcept override { return PreconditionerKind::identity; }
  std::size_t dim() const noexcept override { return dim_; }
  double shift() const noexcept override { return scale_; }
  void apply(std::span<const double> v, std::span<double> out) const override;
  void solve(std::span<const double> v, std::span<double> out) const override;
  double lambda_max() const noexcept override { return scale_; }
  bool is_scaled_identity() const noexcept override { return true; }
  using Preconditioner::apply;
  using Preconditioner::solve;

 private:
  std::size_t dim_;
  double scale_;
};

/// B with rows sqrt(d_i / b) a_i for i in a Hessian batch, so that
/// B^T B = (1/b) A_S^T diag(d) A_S. Stored sparse or dense (as B^T,
/// column per sample) depending on data density.
class HessianSketchFactor {
 public:
  HessianSketchFactor(const GlmLoss& loss, std::span<const double> w,
                      std::span<const std::size_t> batch);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool is_dense() const noexcept { return std::holds_alternative<DenseMatrix>(store_); }
  double trace() const noexcept { return trace_; }

  // B v (length rows) and B^T u (length cols).
  Vector times(std::span<const double> v) const;
  Vector transpose_times(std::span<const double> u) const;
  // out = B^T B v
  void gram_apply(std::span<const double> v, std::span<double> out) const;
  // B B^T (rows x rows)
  DenseMatrix outer_gram() const;
  // B^T B (cols x cols)
  DenseMatrix inner_gram() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double trace_ = 0.0;
  std::variant<SparseRowMatrix, DenseMatrix> store_;
};

/// P = B^T B + sigma I with sigma = rho + nu. With fewer sketch rows than
/// columns, solves use the Woodbury identity through a Cholesky factor of
/// sigma I + B B^T; otherwise P is formed and factored directly.
class SsnPreconditioner final : public Preconditioner {
 public:
  SsnPreconditioner(HessianSketchFactor factor, double sigma,
                    std::uint64_t seed);

  PreconditionerKind kind() const noexcept override { return PreconditionerKind::ssn; }
  std::size_t dim() const noexcept override { return factor_.cols(); }
  double shift() const noexcept override { return sigma_; }
  void apply(std::span<const double> v, std::span<double> out) const override;
  void solve(std::span<const double> v, std::span<double> out) const override;
  double lambda_max() const noexcept override { return lambda_max_; }
  bool lambda_max_converged() const noexcept override { return lambda_converged_; }
  using Preconditioner::apply;
  using Preconditioner::solve;

  const HessianSketchFactor& factor() const noexcept { return factor_; }
  bool uses_woodbury() const noexcept { return dense_p_.empty(); }
  // Cholesky factor of sigma I + B B^T (Woodbury) or of P (direct).
  const DenseMatrix& cholesky_factor() const noexcept { return chol_; }

 private:
  HessianSketchFactor factor_;
  double sigma_;
  DenseMatrix dense_p_;
  DenseMatrix chol_;
  double lambda_max_ = 0.0;
  bool lambda_converged_ = true;
};

struct NystromApproximation {
  DenseMatrix v;   // p x r, orthonormal columns
  Vector lambda;   // r, nonincreasing, >= 0
  double stabilization_shift = 0.0;
};

/// Randomized Nystrom approximation V diag(lambda) V^T of a PSD operator
/// from an r-column Gaussian sketch (shifted Cholesky variant).
NystromApproximation rand_nys_approx(const LinearOperator& hvp, std::size_t p,
                                     std::size_t r, std::uint64_t seed);

/// P = V diag(lambda) V^T + sigma I.
class NyssnPreconditioner final : public Preconditioner {
 public:
  NyssnPreconditioner(NystromApproximation approx, double sigma);

  PreconditionerKind kind() const noexcept override { return PreconditionerKind::nyssn; }
  std::size_t dim() const noexcept override { return approx_.v.rows(); }
  double shift() const noexcept override { return sigma_; }
  void apply(std::span<const double> v, std::span<double> out) const override;
  void solve(std::span<const double> v, std::span<double> out) const override;
  double lambda_max() const noexcept override;
  using Preconditioner::apply;
  using Preconditioner::solve;

  std::size_t rank() const noexcept { return approx_.lambda.size(); }
  const NystromApproximation& approximation() const noexcept { return approx_; }

 private:
  NystromApproximation approx_;
  double sigma_;
};

// rho default: 1e-3 * trace(subsampled Hessian) / p.
double default_rho(const HessianSketchFactor& factor);

std::unique_ptr<SsnPreconditioner> build_ssn(const GlmLoss& loss,
                                             std::span<const double> w,
                                             std::span<const std::size_t> batch,
                                             double rho, std::uint64_t seed = 0);
std::unique_ptr<NyssnPreconditioner> build_nyssn(
    const GlmLoss& loss, std::span<const double> w,
    std::span<const std::size_t> batch, std::size_t rank, double rho,
    std::uint64_t seed);

/// Largest eigenvalue of the pencil (H, P), i.e. of P^{-1/2} H P^{-1/2},
/// for symmetric PSD H and SPD P.
PowerIterationResult generalized_power_iteration(const LinearOperator& h,
                                                 const Preconditioner& p,
                                                 double tol,
                                                 std::size_t max_iter,
                                                 std::uint64_t seed);

// Dense diagnostics; p is limited to kMaxSpectralDim.
inline constexpr std::size_t kMaxSpectralDim = 512;

struct SpectralReport {
  double zeta = 0.0;   // max(lmax - 1, 1 - lmin) of P^{-1/2}(H + rho I)P^{-1/2}
  double d_eff = 0.0;  // tr(H (H + rho I)^{-1})
  double tau = 1.0;    // rho-Hessian dissimilarity
  double at_rho = 0.0;
  double precond_lambda_min = 0.0;
  double precond_lambda_max = 0.0;
};

// Full Hessian (1/n) A^T diag(d) A + nu I as a dense matrix.
DenseMatrix dense_hessian(const GlmLoss& loss, std::span<const double> w);
DenseMatrix dense_operator(const Preconditioner& p);
SpectralReport spectral_report(const GlmLoss& loss, std::span<const double> w,
                               const Preconditioner& p, double rho);
// Effective dimension tr(H (H + beta I)^{-1}) from eigenvalues of H.
double effective_dimension(std::span<const double> eigenvalues, double beta);

}  // namespace sapphire
