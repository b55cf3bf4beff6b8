#include "sapphire/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "sapphire/data.hpp"
#include "sapphire/errors.hpp"
#include "sapphire/linalg.hpp"
#include "sapphire/losses.hpp"
#include "sapphire/precond.hpp"
#include "sapphire/prox_solver.hpp"
#include "sapphire/rng.hpp"
#include "sapphire/solver.hpp"

namespace sapphire::selftest {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Right derivative of the penalty for z > 0, coded from the definitions.
double penalty_slope(const Regularizer& reg, double z) {
  const double lam = reg.lambda();
  const double s = reg.shape();
  switch (reg.kind()) {
    case RegularizerKind::none: return 0.0;
    case RegularizerKind::l1: return lam;
    case RegularizerKind::scad:
      if (z <= lam) return lam;
      if (z <= s * lam) return (s * lam - z) / (s - 1.0);
      return 0.0;
    case RegularizerKind::mcp:
      return z <= s * lam ? lam - z / s : 0.0;
  }
  return 0.0;
}

double one_d_objective(const Regularizer& reg, double x, double t, double z) {
  return 0.5 * (z - x) * (z - x) + t * reg.penalty(z);
}

// --- suites ---------------------------------------------------------------

SuiteResult prox_suite(const Options& o) {
  const ProxFn prox = o.prox ? o.prox : [](const Regularizer& r, double x, double t) {
    return r.prox_scalar(x, t);
  };
  Rng rng(mix_seed(o.seed, 1));
  double worst = 0.0;
  std::string where;
  for (int family = 0; family < 3; ++family) {
    for (std::size_t k = 0; k < o.prox_samples; ++k) {
      const double lam = 0.05 + 2.0 * rng.uniform();
      Regularizer reg;
      if (family == 0) reg = Regularizer::l1(lam);
      if (family == 1) reg = Regularizer::scad(lam, 2.2 + 3.0 * rng.uniform());
      if (family == 2) reg = Regularizer::mcp(lam, 1.2 + 3.0 * rng.uniform());
      const double t_cap = std::min(3.0, 0.95 * reg.max_prox_step());
      const double t = t_cap * (0.01 + 0.99 * rng.uniform());
      const double x = (rng.uniform() * 2.0 - 1.0) * 4.0 * lam * std::max(1.0, reg.shape());
      const double got = prox(reg, x, t);
      const double want = prox_oracle(reg, x, t);
      const double err = std::abs(got - want);
      if (!(err <= worst)) {
        worst = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        where = reg.describe() + " x=" + fmt("%.6g", x) + " t=" + fmt("%.6g", t);
      }
    }
  }
  SuiteResult r{"prox-oracle", worst <= 1e-8, "max |prox - oracle| = " + fmt("%.3e", worst), 0.0};
  if (!r.passed) r.detail += " at " + where;
  return r;
}

DenseMatrix random_orthogonal(std::size_t p, Rng& rng) {
  DenseMatrix g(p, p);
  for (auto& v : g.values()) v = rng.normal();
  return householder_qr(g).q;
}

SuiteResult nystrom_suite(const Options& o) {
  Rng rng(mix_seed(o.seed, 2));
  const std::size_t p = 80;
  double worst_ortho = 0.0, worst_loewner = 0.0, worst_exact = 0.0, min_lambda = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    const DenseMatrix q = random_orthogonal(p, rng);
    Vector eig(p);
    for (std::size_t i = 0; i < p; ++i) eig[i] = std::pow(static_cast<double>(i + 1), -2.0);
    DenseMatrix h(p, p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < p; ++k) s += q(i, k) * eig[k] * q(j, k);
        h(i, j) = s;
      }
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < i; ++j) h(i, j) = h(j, i) = 0.5 * (h(i, j) + h(j, i));
    const LinearOperator op = [&](std::span<const double> x, std::span<double> y) {
      const Vector r = gemv(h, x);
      std::copy(r.begin(), r.end(), y.begin());
    };
    for (const std::size_t rank : {std::size_t{15}, p}) {
      const auto nys = rand_nys_approx(op, p, rank, mix_seed(o.seed, 100 + trial));
      for (double l : nys.lambda) min_lambda = std::min(min_lambda, l);
      const DenseMatrix vtv = matmul_tn(nys.v, nys.v);
      for (std::size_t i = 0; i < vtv.rows(); ++i)
        for (std::size_t j = 0; j < vtv.cols(); ++j)
          worst_ortho = std::max(worst_ortho, std::abs(vtv(i, j) - (i == j ? 1.0 : 0.0)));
      DenseMatrix diff = h;
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < nys.lambda.size(); ++k)
            s += nys.v(i, k) * nys.lambda[k] * nys.v(j, k);
          diff(i, j) -= s;
        }
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < i; ++j) diff(i, j) = diff(j, i) = 0.5 * (diff(i, j) + diff(j, i));
      const auto de = symmetric_eigen(diff);
      worst_loewner = std::max(worst_loewner, -de.values.back());
      if (rank == p) {
        Vector got = nys.lambda;
        std::sort(got.begin(), got.end(), std::greater<>());
        for (std::size_t i = 0; i < p; ++i)
          worst_exact = std::max(worst_exact, std::abs(got[i] - eig[i]));
      }
    }
  }
  const bool ok = min_lambda >= 0.0 && worst_ortho <= 1e-8 && worst_loewner <= 1e-8 &&
                  worst_exact <= 1e-7;
  return {"nystrom-loewner", ok,
          "min lambda " + fmt("%.2e", min_lambda) + ", orthogonality " + fmt("%.2e", worst_ortho) +
              ", Loewner violation " + fmt("%.2e", worst_loewner) + ", full-rank spectrum error " +
              fmt("%.2e", worst_exact),
          0.0};
}

std::shared_ptr<const Dataset> random_dataset(std::size_t n, std::size_t p, bool binary, Rng& rng) {
  DenseMatrix a(n, p);
  for (auto& v : a.values()) v = rng.normal();
  Dataset d;
  d.features = SparseRowMatrix::from_dense(a);
  d.labels.resize(n);
  for (auto& y : d.labels) y = binary ? (rng.uniform() < 0.5 ? -1.0 : 1.0) : rng.normal();
  d.kind = binary ? LabelKind::binary : LabelKind::real;
  d.name = "selftest";
  return std::make_shared<const Dataset>(std::move(d));
}

SuiteResult apg_suite(const Options& o) {
  Rng rng(mix_seed(o.seed, 3));
  const std::size_t p = 25;
  double worst = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    auto data = random_dataset(40, p, false, rng);
    GlmLoss loss(LossKind::squared, data, 0.0);
    Vector w(p, 0.0);
    const auto batch = loss.all_indices();
    auto pre = build_ssn(loss, w, batch, 0.05 + 0.5 * rng.uniform(), mix_seed(o.seed, 30 + trial));
    const auto reg = Regularizer::l1(0.05 + 0.3 * rng.uniform());
    Vector wk(p), vk(p);
    rng.fill_normal(wk);
    rng.fill_normal(vk);
    const double eta = 0.2 + rng.uniform();
    ScaledProxProblem prob{pre.get(), &reg, wk, vk, eta};
    ApgOptions opts;
    opts.tol = 1e-12;
    opts.t_max = 100000;
    const auto got = scaled_prox(prob, opts);

    // Oracle: plain proximal gradient on the dense quadratic.
    const DenseMatrix pm = dense_operator(*pre);
    const auto pe = symmetric_eigen(pm);
    const double step = 1.0 / pe.values.front();
    Vector x = wk, d(p);
    for (int it = 0; it < 20000; ++it) {
      for (std::size_t j = 0; j < p; ++j) d[j] = x[j] - wk[j];
      const Vector pd = gemv(pm, d);
      for (std::size_t j = 0; j < p; ++j) {
        const double z = x[j] - step * (eta * vk[j] + pd[j]);
        const double thr = step * eta * reg.lambda();
        x[j] = z > thr ? z - thr : (z < -thr ? z + thr : 0.0);
      }
    }
    double err = 0.0;
    for (std::size_t j = 0; j < p; ++j) err += (got.solution[j] - x[j]) * (got.solution[j] - x[j]);
    worst = std::max(worst, std::sqrt(err));
  }
  return {"apg-oracle", worst <= 1e-6, "max ||apg - oracle|| = " + fmt("%.3e", worst), 0.0};
}

SuiteResult unbiasedness_suite(const Options& o) {
  Rng rng(mix_seed(o.seed, 4));
  const std::size_t n = 10, p = 6;
  auto data = random_dataset(n, p, true, rng);
  GlmLoss loss(LossKind::logistic, data, 1e-2);
  Vector wk(p), snap(p);
  rng.fill_normal(wk);
  rng.fill_normal(snap);
  const Vector g_snap = loss.full_gradient(snap);
  Vector mean(p, 0.0);
  std::size_t count = 0;
  double at_snapshot = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const std::size_t batch[2] = {i, j};
      const Vector v = variance_reduced_gradient(loss, wk, snap, g_snap, batch);
      for (std::size_t c = 0; c < p; ++c) mean[c] += v[c];
      ++count;
      const Vector v0 = variance_reduced_gradient(loss, snap, snap, g_snap, batch);
      for (std::size_t c = 0; c < p; ++c) at_snapshot = std::max(at_snapshot, std::abs(v0[c] - g_snap[c]));
    }
  const Vector g = loss.full_gradient(wk);
  double err = 0.0;
  for (std::size_t c = 0; c < p; ++c) err = std::max(err, std::abs(mean[c] / count - g[c]));
  const bool ok = count == 45 && err <= 1e-12 && at_snapshot == 0.0;
  return {"unbiasedness", ok,
          std::to_string(count) + " batches, mean deviation " + fmt("%.2e", err) +
              ", snapshot deviation " + fmt("%.2e", at_snapshot),
          0.0};
}

}  // namespace

double prox_oracle(const Regularizer& reg, double x, double t) {
  if (x == 0.0) return 0.0;
  const double sign = x < 0.0 ? -1.0 : 1.0;
  const double ax = std::abs(x);
  // The minimizer shares the sign of x and lies in [0, |x|].
  auto f = [&](double z) { return one_d_objective(reg, ax, t, z); };
  const int grid = 400;
  double best_z = 0.0, best_f = f(0.0);
  for (int i = 1; i <= grid; ++i) {
    const double z = ax * i / grid;
    const double fz = f(z);
    if (fz < best_f) best_f = fz, best_z = z;
  }
  double lo = std::max(0.0, best_z - ax / grid);
  double hi = std::min(ax, best_z + ax / grid);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = f(c), fd = f(d);
  while (hi - lo > 1e-7 * std::max(1.0, ax)) {
    if (fc < fd) {
      hi = d, d = c, fd = fc;
      c = hi - g * (hi - lo), fc = f(c);
    } else {
      lo = c, c = d, fc = fd;
      d = lo + g * (hi - lo), fd = f(d);
    }
  }
  // Zero is optimal when |x| <= t r'(0+).
  if (ax <= t * penalty_slope(reg, 0.0)) return 0.0;
  // Bisection on the derivative z - |x| + t r'(z) inside a widened bracket.
  lo = std::max(0.0, lo - 1e-5 * std::max(1.0, ax));
  hi = std::min(ax, hi + 1e-5 * std::max(1.0, ax));
  auto deriv = [&](double z) { return z - ax + t * penalty_slope(reg, z); };
  if (deriv(lo) > 0.0) lo = 0.0;
  if (deriv(hi) < 0.0) hi = ax;
  for (int it = 0; it < 200 && hi > lo; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (deriv(mid) < 0.0 ? lo : hi) = mid;
  }
  return sign * 0.5 * (lo + hi);
}

Options with_fault(Options base, const std::string& fault) {
  if (fault == "soft-threshold-sign") {
    base.prox = [](const Regularizer& r, double x, double t) {
      const double v = r.prox_scalar(x, t);
      return r.kind() == RegularizerKind::l1 ? -v : v;
    };
    return base;
  }
  throw InvalidArgument("unknown fault \"" + fault + "\"");
}

const std::vector<std::string>& fault_names() {
  static const std::vector<std::string> names = {"soft-threshold-sign"};
  return names;
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"prox-oracle", "nystrom-loewner", "apg-oracle",
                                                 "unbiasedness"};
  return names;
}

SuiteResult run_suite(const std::string& name, const Options& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto& names = suite_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw InvalidArgument("unknown suite \"" + name + "\"");
  SuiteResult r;
  try {
    if (name == "prox-oracle") r = prox_suite(options);
    else if (name == "nystrom-loewner") r = nystrom_suite(options);
    else if (name == "apg-oracle") r = apg_suite(options);
    else r = unbiasedness_suite(options);
  } catch (const std::exception& e) {
    r = {name, false, std::string("exception: ") + e.what(), 0.0};
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<SuiteResult> run_all(const Options& options,
                                 const std::function<void(const SuiteResult&)>& on_result) {
  std::vector<SuiteResult> out;
  for (const auto& name : suite_names()) {
    out.push_back(run_suite(name, options));
    if (on_result) on_result(out.back());
  }
  return out;
}

int exit_code(const std::vector<SuiteResult>& results) {
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  return std::min(failed, 125);
}

}  // namespace sapphire::selftest
