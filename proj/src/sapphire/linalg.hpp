#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace sapphire {

using Vector = std::vector<double>;
using Index = std::uint32_t;
using IndexArray = std::vector<std::size_t>;

// y = op(x); both spans have the operator dimension.
using LinearOperator =
    std::function<void(std::span<const double> x, std::span<double> y)>;

/// Column-major dense matrix. Used for small factors (sketches, Gram
/// matrices, Cholesky factors), never for full data matrices.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static DenseMatrix identity(std::size_t n);
  // Row-major initializer, convenient for hand-written fixtures.
  static DenseMatrix from_rows(
      const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return values_[j * rows_ + i];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return values_[j * rows_ + i];
  }

  std::span<double> col(std::size_t j) {
    return {values_.data() + j * rows_, rows_};
  }
  std::span<const double> col(std::size_t j) const {
    return {values_.data() + j * rows_, rows_};
  }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  DenseMatrix transposed() const;
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct Triplet {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Compressed sparse row matrix in canonical form: column indices strictly
/// increasing within each row, no explicit zeros.
class SparseRowMatrix {
 public:
  struct RowView {
    std::span<const Index> cols;
    std::span<const double> values;
  };

  SparseRowMatrix() : row_offsets_(1, 0) {}

  // Validates the arrays and rejects non-canonical input.
  SparseRowMatrix(std::size_t n_rows, std::size_t n_cols,
                  std::vector<std::size_t> row_offsets,
                  std::vector<Index> col_indices, std::vector<double> values);

  // Duplicates are summed; entries that are (or sum to) zero are dropped.
  static SparseRowMatrix from_triplets(std::size_t n_rows, std::size_t n_cols,
                                       std::vector<Triplet> triplets);
  static SparseRowMatrix from_dense(const DenseMatrix& m);

  std::size_t rows() const noexcept { return n_rows_; }
  std::size_t cols() const noexcept { return n_cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }

  RowView row(std::size_t i) const {
    const auto b = row_offsets_[i];
    const auto e = row_offsets_[i + 1];
    return {{col_indices_.data() + b, e - b}, {values_.data() + b, e - b}};
  }

  std::span<const std::size_t> row_offsets() const noexcept {
    return row_offsets_;
  }
  std::span<const Index> col_indices() const noexcept { return col_indices_; }
  std::span<const double> values() const noexcept { return values_; }

  double row_dot(std::size_t i, std::span<const double> x) const {
    const auto r = row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < r.cols.size(); ++k) s += r.values[k] * x[r.cols[k]];
    return s;
  }
  // y += alpha * a_i
  void row_axpy(std::size_t i, double alpha, std::span<double> y) const {
    const auto r = row(i);
    for (std::size_t k = 0; k < r.cols.size(); ++k) y[r.cols[k]] += alpha * r.values[k];
  }
  double row_squared_norm(std::size_t i) const;

  DenseMatrix to_dense() const;
  SparseRowMatrix select_rows(std::span<const std::size_t> rows) const;
  // Same sparsity pattern, values replaced row-wise by scale[i] * value.
  SparseRowMatrix scale_rows(std::span<const double> scale) const;

  bool operator==(const SparseRowMatrix& other) const = default;

 private:
  std::size_t n_rows_ = 0;
  std::size_t n_cols_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<Index> col_indices_;
  std::vector<double> values_;
};

// Level-1 kernels.
double dot(std::span<const double> x, std::span<const double> y);
double nrm2(std::span<const double> x);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scal(double alpha, std::span<double> x);
bool all_finite(std::span<const double> x);

// Sparse kernels. Summation is sequential within a row, rows ascending.
Vector spmv(const SparseRowMatrix& a, std::span<const double> x);
Vector spmv_t(const SparseRowMatrix& a, std::span<const double> x);

// Dense kernels.
Vector gemv(const DenseMatrix& m, std::span<const double> x);
Vector gemv_t(const DenseMatrix& m, std::span<const double> x);
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// a^T b
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);

/// Lower-triangular Cholesky factor C with C C^T = S. S must be symmetric
/// to 1e-12 (relative to its largest entry).
DenseMatrix cholesky(const DenseMatrix& s);
// In-place triangular solves against a lower factor.
void solve_lower(const DenseMatrix& l, std::span<double> b);
void solve_lower_transposed(const DenseMatrix& l, std::span<double> b);
// Solves (L L^T) x = b in place.
void cholesky_solve(const DenseMatrix& l, std::span<double> b);

struct QrFactors {
  DenseMatrix q;  // p x r, orthonormal columns
  DenseMatrix r;  // r x r, upper triangular
};
QrFactors householder_qr(const DenseMatrix& m);

struct SymmetricEigen {
  Vector values;        // nonincreasing
  DenseMatrix vectors;  // columns are eigenvectors
};
// Cyclic Jacobi; intended for matrices up to a few hundred rows.
SymmetricEigen symmetric_eigen(const DenseMatrix& s);

struct ThinSvd {
  DenseMatrix u;  // p x r, orthonormal columns
  Vector s;       // nonincreasing, >= 0
};
ThinSvd thin_svd(const DenseMatrix& m);

struct PowerIterationResult {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Largest eigenvalue of a symmetric PSD operator. Stops once the eigen
/// residual ||Ax - lambda x|| falls below tol * lambda.
PowerIterationResult power_iteration(const LinearOperator& apply,
                                     std::size_t dim, double tol,
                                     std::size_t max_iter,
                                     std::uint64_t seed);

}  // namespace sapphire
