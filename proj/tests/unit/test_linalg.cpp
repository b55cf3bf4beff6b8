#include <gtest/gtest.h>

#include "oracle.hpp"
#include "sapphire/errors.hpp"
#include "sapphire/linalg.hpp"

using namespace sapphire;

namespace {

SparseRowMatrix small_example() {
  // [[1,0,2],[0,0,0]]
  return SparseRowMatrix(2, 3, {0, 2, 2}, {0, 2}, {1.0, 2.0});
}

}  // namespace

TEST(Spmv, IdentityReturnsInput) {
  const auto eye = SparseRowMatrix::from_dense(DenseMatrix::identity(2));
  const Vector x{3.0, -1.0};
  EXPECT_EQ(spmv(eye, x), x);
  EXPECT_EQ(spmv_t(eye, x), x);
}

TEST(Spmv, HandComputedExample) {
  const auto a = small_example();
  EXPECT_EQ(spmv(a, Vector{1, 1, 1}), (Vector{3, 0}));
  EXPECT_EQ(spmv_t(a, Vector{1, 1}), (Vector{1, 0, 2}));
}

TEST(Spmv, MatchesDenseOracleOnRandomMatrix) {
  Rng rng(11);
  const auto a = oracle::random_sparse(50, 30, 0.1, rng);
  const auto x = oracle::gaussian_vector(30, rng);
  const auto y = oracle::gaussian_vector(50, rng);
  const Eigen::MatrixXd ad = oracle::to_eigen(a);
  const Eigen::VectorXd ax = ad * oracle::to_eigen(x);
  const Eigen::VectorXd aty = ad.transpose() * oracle::to_eigen(y);
  const auto got = spmv(a, x);
  const auto got_t = spmv_t(a, y);
  EXPECT_LE((oracle::to_eigen(got) - ax).norm(), 1e-14 * std::max(1.0, ax.norm()));
  EXPECT_LE((oracle::to_eigen(got_t) - aty).norm(), 1e-14 * std::max(1.0, aty.norm()));
}

TEST(Spmv, Adjointness) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_sparse(40, 25, 0.2, rng);
    const auto x = oracle::gaussian_vector(25, rng);
    const auto y = oracle::gaussian_vector(40, rng);
    const double lhs = dot(spmv(a, x), y);
    const double rhs = dot(x, spmv_t(a, y));
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(Spmv, DimensionMismatchThrows) {
  const auto a = small_example();
  EXPECT_THROW(spmv(a, Vector{1, 2}), DimensionMismatch);
  EXPECT_THROW(spmv_t(a, Vector{1, 2, 3}), DimensionMismatch);
}

TEST(SparseRowMatrix, RejectsNonCanonicalInput) {
  EXPECT_THROW(SparseRowMatrix(1, 3, {0, 2}, {2, 1}, {1.0, 1.0}), InvalidArgument);
  EXPECT_THROW(SparseRowMatrix(1, 3, {0, 1}, {3}, {1.0}), InvalidArgument);
  EXPECT_THROW(SparseRowMatrix(1, 3, {0, 1}, {0}, {0.0}), InvalidArgument);
}

TEST(SparseRowMatrix, TripletsSumDuplicatesAndDropZeros) {
  const auto a = SparseRowMatrix::from_triplets(
      2, 2, {{0, 1, 1.0}, {0, 1, 2.0}, {1, 0, 1.0}, {1, 0, -1.0}});
  EXPECT_EQ(a.nnz(), 1u);
  EXPECT_EQ(a.to_dense()(0, 1), 3.0);
}

TEST(Cholesky, DiagonalAndHandExamples) {
  const auto c1 = cholesky(DenseMatrix::from_rows({{4, 0}, {0, 9}}));
  EXPECT_DOUBLE_EQ(c1(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(c1(1, 1), 3.0);
  EXPECT_DOUBLE_EQ(c1(1, 0), 0.0);
  const auto c2 = cholesky(DenseMatrix::from_rows({{4, 2}, {2, 5}}));
  EXPECT_DOUBLE_EQ(c2(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(c2(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(c2(1, 1), 2.0);
  EXPECT_DOUBLE_EQ(c2(0, 1), 0.0);
}

TEST(Cholesky, RandomSpdReconstructionAndSolve) {
  Rng rng(13);
  const Eigen::MatrixXd b = oracle::gaussian(30, 20, rng);
  const Eigen::MatrixXd s = b.transpose() * b + Eigen::MatrixXd::Identity(20, 20);
  const auto c = oracle::to_eigen(cholesky(oracle::from_eigen(s)));
  EXPECT_LE((c * c.transpose() - s).norm(), 1e-10 * s.norm());
  EXPECT_EQ(c.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().cwiseAbs().maxCoeff(), 0.0);

  const auto rhs = oracle::gaussian_vector(20, rng);
  Vector z = rhs;
  cholesky_solve(oracle::from_eigen(c), z);
  const Eigen::VectorXd want = s.ldlt().solve(oracle::to_eigen(rhs));
  EXPECT_LE((oracle::to_eigen(z) - want).norm(), 1e-9 * want.norm());
}

TEST(Cholesky, IndefiniteReportsPivot) {
  try {
    cholesky(DenseMatrix::from_rows({{1, 0, 0}, {0, 2, 0}, {0, 0, -1}}));
    FAIL() << "expected NotPositiveDefinite";
  } catch (const NotPositiveDefinite& e) {
    EXPECT_EQ(e.pivot(), 2u);
  }
}

TEST(Cholesky, RejectsAsymmetric) {
  EXPECT_THROW(cholesky(DenseMatrix::from_rows({{4, 1}, {0, 4}})), InvalidArgument);
}

TEST(ThinSvd, DiagonalExample) {
  const auto r = thin_svd(DenseMatrix::from_rows({{3, 0}, {0, 2}, {0, 0}}));
  EXPECT_NEAR(r.s[0], 3.0, 1e-12);
  EXPECT_NEAR(r.s[1], 2.0, 1e-12);
}

TEST(ThinSvd, OrthonormalColumnsGiveUnitValues) {
  Rng rng(14);
  const auto q = householder_qr(oracle::from_eigen(oracle::gaussian(12, 4, rng))).q;
  const auto r = thin_svd(q);
  for (double s : r.s) EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(ThinSvd, MatchesGramEigenvalues) {
  Rng rng(15);
  const Eigen::MatrixXd m = oracle::gaussian(100, 10, rng);
  const auto r = thin_svd(oracle::from_eigen(m));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
  for (int i = 0; i < 10; ++i)
    EXPECT_NEAR(r.s[i], std::sqrt(es.eigenvalues()(9 - i)), 1e-9 * r.s[0]);
  const Eigen::MatrixXd u = oracle::to_eigen(r.u);
  EXPECT_LE(oracle::max_abs(u.transpose() * u - Eigen::MatrixXd::Identity(10, 10)), 1e-10);
  // U diag(s) V^T reconstructs M with V = M^T U diag(1/s).
  const Eigen::MatrixXd proj = u * u.transpose() * m;
  EXPECT_LE((proj - m).norm(), 1e-9 * m.norm());
  for (int i = 1; i < 10; ++i) EXPECT_GE(r.s[i - 1], r.s[i]);
}

TEST(SymmetricEigen, MatchesEigenOracle) {
  Rng rng(16);
  const Eigen::MatrixXd b = oracle::gaussian(15, 15, rng);
  const Eigen::MatrixXd s = b + b.transpose();
  const auto r = symmetric_eigen(oracle::from_eigen(s));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  for (int i = 0; i < 15; ++i) EXPECT_NEAR(r.values[i], es.eigenvalues()(14 - i), 1e-10);
}

TEST(PowerIteration, DiagonalOperator) {
  const LinearOperator op = [](std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < 3; ++i) y[i] = static_cast<double>(i + 1) * x[i];
  };
  const auto r = power_iteration(op, 3, 1e-8, 10000, 1);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.value, 3.0, 1e-6);
}

TEST(PowerIteration, IdentityConvergesInOneIteration) {
  const LinearOperator op = [](std::span<const double> x, std::span<double> y) {
    std::copy(x.begin(), x.end(), y.begin());
  };
  const auto r = power_iteration(op, 7, 1e-8, 100, 2);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_TRUE(r.converged);
}

TEST(PowerIteration, RandomSpdMatchesDenseOracle) {
  Rng rng(17);
  const Eigen::MatrixXd b = oracle::gaussian(50, 50, rng);
  const Eigen::MatrixXd s = b.transpose() * b;
  const auto sd = oracle::from_eigen(s);
  const LinearOperator op = [&](std::span<const double> x, std::span<double> y) {
    const auto r = gemv(sd, x);
    std::copy(r.begin(), r.end(), y.begin());
  };
  const auto r = power_iteration(op, 50, 1e-10, 100000, 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  const double top = es.eigenvalues()(49);
  EXPECT_NEAR(r.value, top, 1e-6 * top);
  EXPECT_LE(r.value, top * (1 + 1e-12));
}

TEST(PowerIteration, ReportsNonConvergence) {
  const LinearOperator op = [](std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (i == 0 ? 1.0 : 0.999) * x[i];
  };
  const auto r = power_iteration(op, 10, 1e-14, 3, 4);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3u);
}

TEST(PowerIteration, DeterministicGivenSeed) {
  Rng rng(18);
  const Eigen::MatrixXd b = oracle::gaussian(20, 20, rng);
  const auto sd = oracle::from_eigen(Eigen::MatrixXd(b.transpose() * b));
  const LinearOperator op = [&](std::span<const double> x, std::span<double> y) {
    const auto r = gemv(sd, x);
    std::copy(r.begin(), r.end(), y.begin());
  };
  EXPECT_EQ(power_iteration(op, 20, 1e-6, 50, 9).value, power_iteration(op, 20, 1e-6, 50, 9).value);
}

TEST(Level1, DotAndNorm) {
  const Vector x{1, 2, 3, 4, 5};
  EXPECT_EQ(dot(x, x), 55.0);
  EXPECT_NEAR(nrm2(x), std::sqrt(55.0), 1e-15);
  Vector y{1, 1, 1, 1, 1};
  axpy(2.0, x, y);
  EXPECT_EQ(y, (Vector{3, 5, 7, 9, 11}));
  EXPECT_FALSE(all_finite(Vector{1.0, std::nan("")}));
}
