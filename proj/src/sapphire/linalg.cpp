#include "sapphire/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sapphire/errors.hpp"
#include "sapphire/rng.hpp"

namespace sapphire {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_)
    throw DimensionMismatch("DenseMatrix", rows_ * cols_, values_.size());
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::from_rows(
    const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.front().size();
  DenseMatrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) throw DimensionMismatch("from_rows", c, rows[i].size());
    for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t j = 0; j < cols_; ++j)
    for (std::size_t i = 0; i < rows_; ++i) t(j, i) = (*this)(i, j);
  return t;
}

bool DenseMatrix::all_finite() const { return sapphire::all_finite(values_); }

SparseRowMatrix::SparseRowMatrix(std::size_t n_rows, std::size_t n_cols,
                                 std::vector<std::size_t> row_offsets,
                                 std::vector<Index> col_indices,
                                 std::vector<double> values)
    : n_rows_(n_rows),
      n_cols_(n_cols),
      row_offsets_(std::move(row_offsets)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  if (row_offsets_.size() != n_rows_ + 1)
    throw DimensionMismatch("SparseRowMatrix offsets", n_rows_ + 1,
                            row_offsets_.size());
  if (col_indices_.size() != values_.size())
    throw DimensionMismatch("SparseRowMatrix values", col_indices_.size(),
                            values_.size());
  if (row_offsets_.front() != 0 || row_offsets_.back() != values_.size())
    throw InvalidArgument("SparseRowMatrix: offsets must span [0, nnz]");
  for (std::size_t i = 0; i < n_rows_; ++i) {
    if (row_offsets_[i] > row_offsets_[i + 1])
      throw InvalidArgument("SparseRowMatrix: offsets must be nondecreasing");
    for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
      if (col_indices_[k] >= n_cols_)
        throw InvalidArgument("SparseRowMatrix: column index out of range");
      if (k > row_offsets_[i] && col_indices_[k] <= col_indices_[k - 1])
        throw InvalidArgument(
            "SparseRowMatrix: column indices must be strictly increasing");
      if (values_[k] == 0.0)
        throw InvalidArgument("SparseRowMatrix: explicit zero stored");
    }
  }
}

SparseRowMatrix SparseRowMatrix::from_triplets(std::size_t n_rows,
                                               std::size_t n_cols,
                                               std::vector<Triplet> triplets) {
  for (const auto& t : triplets)
    if (t.row >= n_rows || t.col >= n_cols)
      throw InvalidArgument("from_triplets: coordinate out of range");
  std::stable_sort(triplets.begin(), triplets.end(),
                   [](const Triplet& a, const Triplet& b) {
                     return a.row != b.row ? a.row < b.row : a.col < b.col;
                   });
  std::vector<std::size_t> offsets(n_rows + 1, 0);
  std::vector<Index> cols;
  std::vector<double> vals;
  std::size_t k = 0;
  while (k < triplets.size()) {
    const auto row = triplets[k].row;
    const auto col = triplets[k].col;
    double sum = 0.0;
    while (k < triplets.size() && triplets[k].row == row &&
           triplets[k].col == col) {
      sum += triplets[k].value;
      ++k;
    }
    if (sum != 0.0) {
      cols.push_back(static_cast<Index>(col));
      vals.push_back(sum);
      ++offsets[row + 1];
    }
  }
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  return SparseRowMatrix(n_rows, n_cols, std::move(offsets), std::move(cols),
                         std::move(vals));
}

SparseRowMatrix SparseRowMatrix::from_dense(const DenseMatrix& m) {
  std::vector<std::size_t> offsets(m.rows() + 1, 0);
  std::vector<Index> cols;
  std::vector<double> vals;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) {
        cols.push_back(static_cast<Index>(j));
        vals.push_back(m(i, j));
      }
    }
    offsets[i + 1] = vals.size();
  }
  return SparseRowMatrix(m.rows(), m.cols(), std::move(offsets),
                         std::move(cols), std::move(vals));
}

double SparseRowMatrix::row_squared_norm(std::size_t i) const {
  const auto r = row(i);
  double s = 0.0;
  for (double v : r.values) s += v * v;
  return s;
}

DenseMatrix SparseRowMatrix::to_dense() const {
  DenseMatrix d(n_rows_, n_cols_);
  for (std::size_t i = 0; i < n_rows_; ++i) {
    const auto r = row(i);
    for (std::size_t k = 0; k < r.cols.size(); ++k) d(i, r.cols[k]) = r.values[k];
  }
  return d;
}

SparseRowMatrix SparseRowMatrix::select_rows(
    std::span<const std::size_t> rows) const {
  std::vector<std::size_t> offsets(rows.size() + 1, 0);
  std::vector<Index> cols;
  std::vector<double> vals;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= n_rows_) throw InvalidArgument("select_rows: index out of range");
    const auto r = row(rows[k]);
    cols.insert(cols.end(), r.cols.begin(), r.cols.end());
    vals.insert(vals.end(), r.values.begin(), r.values.end());
    offsets[k + 1] = vals.size();
  }
  return SparseRowMatrix(rows.size(), n_cols_, std::move(offsets),
                         std::move(cols), std::move(vals));
}

SparseRowMatrix SparseRowMatrix::scale_rows(
    std::span<const double> scale) const {
  if (scale.size() != n_rows_)
    throw DimensionMismatch("scale_rows", n_rows_, scale.size());
  std::vector<std::size_t> offsets(n_rows_ + 1, 0);
  std::vector<Index> cols;
  std::vector<double> vals;
  cols.reserve(nnz());
  vals.reserve(nnz());
  for (std::size_t i = 0; i < n_rows_; ++i) {
    const auto r = row(i);
    for (std::size_t k = 0; k < r.cols.size(); ++k) {
      const double v = scale[i] * r.values[k];
      if (v != 0.0) {
        cols.push_back(r.cols[k]);
        vals.push_back(v);
      }
    }
    offsets[i + 1] = vals.size();
  }
  return SparseRowMatrix(n_rows_, n_cols_, std::move(offsets),
                         std::move(cols), std::move(vals));
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("dot", x.size(), y.size());
  // Four fixed partial sums: vectorizable and still order-deterministic.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t n = x.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

double nrm2(std::span<const double> x) {
  // Scaled accumulation avoids overflow for large entries.
  double scale = 0.0;
  double ssq = 1.0;
  for (double v : x) {
    if (v == 0.0) continue;
    const double a = std::abs(v);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionMismatch("axpy", y.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scal(double alpha, std::span<double> x) {
  for (auto& v : x) v *= alpha;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

Vector spmv(const SparseRowMatrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) throw DimensionMismatch("spmv", a.cols(), x.size());
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = a.row_dot(i, x);
  return y;
}

Vector spmv_t(const SparseRowMatrix& a, std::span<const double> x) {
  if (x.size() != a.rows()) throw DimensionMismatch("spmv_t", a.rows(), x.size());
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    if (x[i] != 0.0) a.row_axpy(i, x[i], y);
  return y;
}

Vector gemv(const DenseMatrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw DimensionMismatch("gemv", m.cols(), x.size());
  Vector y(m.rows(), 0.0);
  for (std::size_t j = 0; j < m.cols(); ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    const auto c = m.col(j);
    for (std::size_t i = 0; i < m.rows(); ++i) y[i] += c[i] * xj;
  }
  return y;
}

Vector gemv_t(const DenseMatrix& m, std::span<const double> x) {
  if (x.size() != m.rows()) throw DimensionMismatch("gemv_t", m.rows(), x.size());
  Vector y(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) y[j] = dot(m.col(j), x);
  return y;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul", a.cols(), b.rows());
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    auto cj = c.col(j);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      if (bkj == 0.0) continue;
      const auto ak = a.col(k);
      for (std::size_t i = 0; i < a.rows(); ++i) cj[i] += ak[i] * bkj;
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) throw DimensionMismatch("matmul_tn", a.rows(), b.rows());
  DenseMatrix c(a.cols(), b.cols());
  if (&a == &b) {
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t i = 0; i <= j; ++i) {
        const double v = dot(a.col(i), b.col(j));
        c(i, j) = v;
        c(j, i) = v;
      }
    return c;
  }
  for (std::size_t j = 0; j < b.cols(); ++j)
    for (std::size_t i = 0; i < a.cols(); ++i) c(i, j) = dot(a.col(i), b.col(j));
  return c;
}

DenseMatrix cholesky(const DenseMatrix& s) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw DimensionMismatch("cholesky (square)", n, s.cols());
  double max_abs = 0.0;
  for (double v : s.values()) max_abs = std::max(max_abs, std::abs(v));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = j + 1; i < n; ++i)
      if (std::abs(s(i, j) - s(j, i)) > 1e-12 * std::max(1.0, max_abs))
        throw InvalidArgument("cholesky: matrix is not symmetric");

  // Left-looking, column-oriented so the inner updates run down contiguous
  // columns.
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    auto lj = l.col(j);
    const auto sj = s.col(j);
    for (std::size_t i = j; i < n; ++i) lj[i] = sj[i];
    for (std::size_t k = 0; k < j; ++k) {
      const auto lk = l.col(k);
      const double ljk = lk[j];
      if (ljk == 0.0) continue;
      for (std::size_t i = j; i < n; ++i) lj[i] -= lk[i] * ljk;
    }
    const double d = lj[j];
    if (!(d > 0.0)) throw NotPositiveDefinite(j);
    const double ljj = std::sqrt(d);
    lj[j] = ljj;
    const double inv = 1.0 / ljj;
    for (std::size_t i = j + 1; i < n; ++i) lj[i] *= inv;
  }
  return l;
}

void solve_lower(const DenseMatrix& l, std::span<double> b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw DimensionMismatch("solve_lower", n, b.size());
  for (std::size_t j = 0; j < n; ++j) {
    b[j] /= l(j, j);
    const double bj = b[j];
    const auto c = l.col(j);
    for (std::size_t i = j + 1; i < n; ++i) b[i] -= c[i] * bj;
  }
}

void solve_lower_transposed(const DenseMatrix& l, std::span<double> b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw DimensionMismatch("solve_lower_transposed", n, b.size());
  for (std::size_t jj = n; jj-- > 0;) {
    const auto c = l.col(jj);
    double v = b[jj];
    for (std::size_t i = jj + 1; i < n; ++i) v -= c[i] * b[i];
    b[jj] = v / c[jj];
  }
}

void cholesky_solve(const DenseMatrix& l, std::span<double> b) {
  solve_lower(l, b);
  solve_lower_transposed(l, b);
}

QrFactors householder_qr(const DenseMatrix& m) {
  const std::size_t p = m.rows();
  const std::size_t r = m.cols();
  if (p < r) throw InvalidArgument("householder_qr: requires rows >= cols");
  DenseMatrix a = m;
  std::vector<Vector> reflectors;
  reflectors.reserve(r);
  std::vector<double> betas(r, 0.0);

  for (std::size_t k = 0; k < r; ++k) {
    Vector v(a.col(k).begin() + k, a.col(k).end());
    const double alpha = nrm2(v);
    if (alpha == 0.0) {
      reflectors.emplace_back(v.size(), 0.0);
      continue;
    }
    const double sign = v[0] >= 0.0 ? 1.0 : -1.0;
    v[0] += sign * alpha;
    const double vnorm2 = dot(v, v);
    betas[k] = 2.0 / vnorm2;
    for (std::size_t j = k; j < r; ++j) {
      auto cj = a.col(j).subspan(k);
      const double f = betas[k] * dot(v, cj);
      axpy(-f, v, cj);
    }
    reflectors.push_back(std::move(v));
  }

  QrFactors out{DenseMatrix(p, r), DenseMatrix(r, r)};
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i <= j; ++i) out.r(i, j) = a(i, j);
  for (std::size_t j = 0; j < r; ++j) out.q(j, j) = 1.0;
  for (std::size_t kk = r; kk-- > 0;) {
    if (betas[kk] == 0.0) continue;
    const auto& v = reflectors[kk];
    for (std::size_t j = 0; j < r; ++j) {
      auto qj = out.q.col(j).subspan(kk);
      const double f = betas[kk] * dot(v, qj);
      axpy(-f, v, qj);
    }
  }
  return out;
}

SymmetricEigen symmetric_eigen(const DenseMatrix& s) {
  const std::size_t n = s.rows();
  if (s.cols() != n) throw DimensionMismatch("symmetric_eigen (square)", n, s.cols());
  DenseMatrix a = s;
  // Symmetrize to remove round-off asymmetry from callers.
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = j + 1; i < n; ++i) {
      const double avg = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = avg;
      a(j, i) = avg;
    }
  DenseMatrix v = DenseMatrix::identity(n);

  double total = 0.0;
  for (double x : a.values()) total += x * x;
  const double tiny = 1e-300;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < j; ++i) off += a(i, j) * a(i, j);
    if (off <= 1e-32 * total || off < tiny) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < tiny) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out{Vector(n), DenseMatrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    std::copy(v.col(order[k]).begin(), v.col(order[k]).end(),
              out.vectors.col(k).begin());
  }
  return out;
}

ThinSvd thin_svd(const DenseMatrix& m) {
  if (m.rows() < m.cols()) throw InvalidArgument("thin_svd: requires rows >= cols");
  const auto qr = householder_qr(m);
  // Left singular vectors of R are the eigenvectors of R R^T.
  DenseMatrix rrt(qr.r.rows(), qr.r.rows());
  const std::size_t r = qr.r.rows();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      for (std::size_t k = std::max(i, j); k < r; ++k) acc += qr.r(i, k) * qr.r(j, k);
      rrt(i, j) = acc;
      rrt(j, i) = acc;
    }
  const auto eig = symmetric_eigen(rrt);
  ThinSvd out{matmul(qr.q, eig.vectors), Vector(r)};
  for (std::size_t k = 0; k < r; ++k) out.s[k] = std::sqrt(std::max(0.0, eig.values[k]));
  return out;
}

PowerIterationResult power_iteration(const LinearOperator& apply,
                                     std::size_t dim, double tol,
                                     std::size_t max_iter,
                                     std::uint64_t seed) {
  PowerIterationResult res;
  if (dim == 0) {
    res.converged = true;
    return res;
  }
  Rng rng(seed);
  Vector x(dim);
  rng.fill_normal(x);
  scal(1.0 / nrm2(x), x);
  Vector y(dim);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    std::fill(y.begin(), y.end(), 0.0);
    apply(x, y);
    const double lambda = dot(x, y);
    res.value = lambda;
    res.iterations = it;
    double resid2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = y[i] - lambda * x[i];
      resid2 += d * d;
    }
    const double ynorm = nrm2(y);
    if (ynorm == 0.0 || std::sqrt(resid2) <= tol * std::abs(lambda)) {
      res.converged = true;
      return res;
    }
    for (std::size_t i = 0; i < dim; ++i) x[i] = y[i] / ynorm;
  }
  return res;
}

}  // namespace sapphire
