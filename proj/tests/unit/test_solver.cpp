#include <gtest/gtest.h>

#include "oracle.hpp"
#include "sapphire/errors.hpp"
#include "sapphire/solver.hpp"

using namespace sapphire;

namespace {

Eigen::VectorXd naive_sample_grad(const GlmLoss& loss, const Eigen::MatrixXd& a, std::size_t i,
                                  const Eigen::VectorXd& w) {
  return oracle::naive_dphi(loss.kind(), a.row(i).dot(w), loss.data().labels[i]) *
             a.row(i).transpose() +
         loss.nu() * w;
}

Eigen::VectorXd naive_full_grad(const GlmLoss& loss, const Eigen::MatrixXd& a,
                                const Eigen::VectorXd& w) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
  for (Eigen::Index i = 0; i < a.rows(); ++i) g += naive_sample_grad(loss, a, i, w);
  return g / static_cast<double>(a.rows());
}

std::shared_ptr<const Dataset> lasso_data(std::size_t n, std::size_t p, double kappa,
                                          std::uint64_t seed) {
  auto s = make_synthetic({.n = n, .p = p, .condition_number = kappa, .support_size = 5,
                           .noise_std = 0.01, .task = SyntheticTask::lasso, .seed = seed});
  return std::make_shared<const Dataset>(std::move(s.dataset));
}

std::shared_ptr<const Dataset> scaled_identity_data(std::size_t p) {
  Dataset d;
  DenseMatrix a = DenseMatrix::identity(p);
  for (auto& x : a.values()) x *= std::sqrt(static_cast<double>(p));
  d.features = SparseRowMatrix::from_dense(a);
  d.labels = Vector(p, 1.0);
  return std::make_shared<const Dataset>(std::move(d));
}

SolverConfig small_config() {
  SolverConfig c;
  c.b_g = 10;
  c.b_h = 40;
  c.m = 8;
  c.alpha = 1.0;
  c.seed = 5;
  c.budget.max_passes = 30;
  return c;
}

}  // namespace

TEST(VarianceReducedGradient, MatchesNaiveFormula) {
  Rng rng(71);
  GlmLoss loss(LossKind::logistic, oracle::random_dataset(40, 9, true, rng, 0.5), 0.03);
  const Eigen::MatrixXd a = oracle::to_eigen(loss.data().features);
  const auto w = oracle::gaussian_vector(9, rng);
  const auto s = oracle::gaussian_vector(9, rng);
  const auto g = loss.full_gradient(s);
  const auto batch = rng.sample_without_replacement(40, 7);
  const auto v = variance_reduced_gradient(loss, w, s, g, batch);
  Eigen::VectorXd want = oracle::to_eigen(g);
  for (auto i : batch)
    want += (naive_sample_grad(loss, a, i, oracle::to_eigen(w)) -
             naive_sample_grad(loss, a, i, oracle::to_eigen(s))) / 7.0;
  EXPECT_LE((oracle::to_eigen(v) - want).cwiseAbs().maxCoeff(), 1e-13);
  // At the snapshot the estimator is the snapshot gradient exactly.
  EXPECT_EQ(variance_reduced_gradient(loss, s, s, g, batch), g);
  EXPECT_THROW(variance_reduced_gradient(loss, w, s, g, std::span<const std::size_t>{}),
               InvalidArgument);
}

TEST(SapphireRun, LoggedInnerStepsReproduce) {
  GlmLoss loss(LossKind::squared, lasso_data(120, 30, 50.0, 1), 0.0);
  const auto reg = Regularizer::l1(1e-3);
  const Eigen::MatrixXd a = oracle::to_eigen(loss.data().features);
  SolverConfig cfg = small_config();
  cfg.budget.max_stages = 4;
  std::size_t steps = 0;
  Vector last_snapshot;
  SolverHooks hooks;
  hooks.on_inner_step = [&](const InnerStep& s) {
    ++steps;
    ASSERT_EQ(s.batch.size(), cfg.b_g);
    // Snapshot gradient is the exact full gradient.
    const Eigen::VectorXd g = naive_full_grad(loss, a, oracle::to_eigen(s.snapshot));
    EXPECT_LE((oracle::to_eigen(s.snapshot_gradient) - g).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::VectorXd v = g;
    for (auto i : s.batch)
      v += (naive_sample_grad(loss, a, i, oracle::to_eigen(s.w_k)) -
            naive_sample_grad(loss, a, i, oracle::to_eigen(s.snapshot))) /
           static_cast<double>(s.batch.size());
    EXPECT_LE((oracle::to_eigen(s.v_k) - v).cwiseAbs().maxCoeff(), 1e-12);
    if (s.k == 0) {
      // With the "last" option each stage starts from the previous stage's
      // final iterate.
      EXPECT_EQ(Vector(s.w_k.begin(), s.w_k.end()), Vector(s.snapshot.begin(), s.snapshot.end()));
      if (!last_snapshot.empty()) EXPECT_EQ(Vector(s.snapshot.begin(), s.snapshot.end()), last_snapshot);
    }
    if (s.k + 1 == cfg.m) last_snapshot.assign(s.w_next.begin(), s.w_next.end());
  };
  const auto r = sapphire_run(loss, reg, cfg, hooks);
  EXPECT_EQ(steps, 4 * cfg.m);
  EXPECT_EQ(r.w_final, last_snapshot);
}

TEST(SapphireRun, AverageSnapshotIsMeanOfInnerIterates) {
  // Logistic needs binary labels; threshold the lasso responses.
  auto d = std::make_shared<Dataset>(*lasso_data(100, 20, 10.0, 2));
  for (auto& y : d->labels) y = y >= 0 ? 1.0 : -1.0;
  d->kind = LabelKind::binary;
  GlmLoss loss(LossKind::logistic, d, 1e-3);
  SolverConfig cfg = small_config();
  cfg.snapshot = SnapshotOption::average;
  cfg.budget.max_stages = 1;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(20);
  SolverHooks hooks;
  hooks.on_inner_step = [&](const InnerStep& s) { sum += oracle::to_eigen(s.w_next); };
  const auto r = sapphire_run(loss, Regularizer::l1(1e-3), cfg, hooks);
  EXPECT_LE((oracle::to_eigen(r.w_final) - sum / static_cast<double>(cfg.m)).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(SapphireRun, DeterministicForFixedSeed) {
  GlmLoss loss(LossKind::squared, lasso_data(150, 25, 100.0, 3), 0.0);
  const auto reg = Regularizer::l1(1e-3);
  for (auto kind : {PreconditionerKind::ssn, PreconditionerKind::nyssn}) {
    SolverConfig cfg = small_config();
    cfg.precond = kind;
    cfg.nyssn_rank = 10;
    const auto a = sapphire_run(loss, reg, cfg);
    const auto b = sapphire_run(loss, reg, cfg);
    EXPECT_EQ(a.w_final, b.w_final);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].objective, b.trace[k].objective);
    cfg.seed = 6;
    EXPECT_NE(sapphire_run(loss, reg, cfg).w_final, a.w_final);
  }
}

TEST(SapphireRun, PassAccounting) {
  const std::size_t n = 200;
  GlmLoss loss(LossKind::squared, lasso_data(n, 20, 10.0, 4), 0.0);
  SolverConfig cfg = small_config();
  cfg.schedule = UpdateSchedule{2, 3};
  cfg.budget.max_stages = 8;
  cfg.budget.max_passes = 1e9;
  const auto r = sapphire_run(loss, Regularizer::l1(1e-4), cfg);
  ASSERT_EQ(r.trace.size(), 9u);
  EXPECT_EQ(r.trace[0].effective_passes, 0.0);
  std::uint64_t evals = 0;
  for (std::size_t stage = 0; stage < 8; ++stage) {
    const bool rebuilt = stage < 2 || (stage - 1) % 3 == 0;
    EXPECT_EQ(r.trace[stage + 1].rebuilt, rebuilt) << stage;
    evals += n + 2 * cfg.m * cfg.b_g + (rebuilt ? cfg.b_h : 0);
    EXPECT_EQ(r.trace[stage + 1].gradient_evaluations, evals);
    EXPECT_DOUBLE_EQ(r.trace[stage + 1].effective_passes, static_cast<double>(evals) / n);
  }
  // ProxSVRG never pays for Hessian batches.
  const auto s = prox_svrg_run(loss, Regularizer::l1(1e-4), cfg);
  EXPECT_EQ(s.trace.back().gradient_evaluations, 8 * (n + 2 * cfg.m * cfg.b_g));
}

TEST(SapphireRun, PassBudgetIsNeverExceeded) {
  GlmLoss loss(LossKind::squared, lasso_data(100, 10, 10.0, 5), 0.0);
  SolverConfig cfg = small_config();
  cfg.budget.max_passes = 7.5;
  const auto r = sapphire_run(loss, Regularizer::l1(1e-4), cfg);
  EXPECT_EQ(r.termination, Termination::budget);
  EXPECT_LE(r.trace.back().effective_passes, 7.5);
  const double per_stage = (100.0 + 2 * 8 * 10 + 40) / 100.0;
  EXPECT_GT(r.trace.back().effective_passes + per_stage, 7.5);
}

TEST(UpdateSchedule, FiresDuringWarmupThenPeriodically) {
  const UpdateSchedule s{3, 5};
  std::vector<std::size_t> fired;
  for (std::size_t k = 0; k < 20; ++k)
    if (s.fires(k)) fired.push_back(k);
  EXPECT_EQ(fired, (std::vector<std::size_t>{0, 1, 2, 7, 12, 17}));
  const UpdateSchedule once{1, 0};
  EXPECT_TRUE(once.fires(0));
  EXPECT_FALSE(once.fires(1));
}

TEST(ProxSvrg, InnerStepIsPlainProximalGradient) {
  GlmLoss loss(LossKind::squared, lasso_data(80, 12, 10.0, 6), 0.0);
  const auto reg = Regularizer::l1(0.01);
  SolverConfig cfg = small_config();
  cfg.budget.max_stages = 2;
  double eta = 0.0;
  std::size_t rebuilds = 0;
  std::size_t checked = 0;
  SolverHooks hooks;
  hooks.on_rebuild = [&](std::size_t, const Preconditioner& p, double e) {
    EXPECT_TRUE(p.is_scaled_identity());
    EXPECT_EQ(p.shift(), 1.0);
    eta = e;
    ++rebuilds;
  };
  hooks.on_inner_step = [&](const InnerStep& s) {
    for (std::size_t j = 0; j < s.w_k.size(); ++j) {
      const double z = s.w_k[j] - eta * s.v_k[j];
      EXPECT_EQ(s.w_next[j], std::copysign(std::max(0.0, std::abs(z) - eta * 0.01), z));
    }
    ++checked;
  };
  const auto r = prox_svrg_run(loss, reg, cfg, hooks);
  EXPECT_EQ(rebuilds, 1u);
  EXPECT_EQ(checked, 2 * cfg.m);

  SolverConfig same = cfg;
  same.precond = PreconditionerKind::identity;
  same.schedule = UpdateSchedule{1, 0};
  EXPECT_EQ(sapphire_run(loss, reg, same).w_final, r.w_final);
}

TEST(ProxSvrg, FullBatchIsMonotoneProximalGradient) {
  GlmLoss loss(LossKind::squared, lasso_data(60, 15, 30.0, 7), 0.0);
  SolverConfig cfg;
  cfg.b_g = 60;
  cfg.b_h = 60;
  cfg.m = 1;
  cfg.alpha = 0.5;
  cfg.budget.max_passes = 1e9;
  cfg.budget.max_stages = 50;
  cfg.stall_stages = 1000;
  const auto r = prox_svrg_run(loss, Regularizer::l1(1e-3), cfg);
  ASSERT_EQ(r.trace.size(), 51u);
  for (std::size_t k = 1; k < r.trace.size(); ++k)
    EXPECT_LE(r.trace[k].objective, r.trace[k - 1].objective * (1 + 1e-15)) << k;
}

TEST(EstimateEta, ScaledIdentityExamples) {
  const std::size_t p = 5;
  GlmLoss loss(LossKind::squared, scaled_identity_data(p), 0.0);
  const IdentityPreconditioner id(p);
  const auto all = loss.all_indices();
  const Vector w(p, 0.0);
  SolverConfig cfg;
  cfg.alpha = 0.5;
  cfg.eta_rule = EtaRule::hessian;
  cfg.b_g = 1;
  auto e = estimate_eta(loss, id, w, all, 0.0, cfg, 1);
  EXPECT_NEAR(e.lambda_hat, 1.0, 1e-12);
  EXPECT_NEAR(e.tau_hat, static_cast<double>(p), 1e-12);
  EXPECT_NEAR(e.eta, 0.5, 1e-12);
  cfg.eta_rule = EtaRule::expected_smoothness;
  // b = 1: L = tau_hat; b = n: L = lambda_hat.
  EXPECT_NEAR(estimate_eta(loss, id, w, all, 0.0, cfg, 1).eta, 0.5 / p, 1e-12);
  cfg.b_g = p;
  EXPECT_NEAR(estimate_eta(loss, id, w, all, 0.0, cfg, 1).eta, 0.5, 1e-12);
  cfg.b_g = 2;
  const double want = 5.0 * 1.0 / (2.0 * 4.0) * 1.0 + 3.0 / (2.0 * 4.0) * p;
  EXPECT_NEAR(estimate_eta(loss, id, w, all, 0.0, cfg, 1).smoothness, want, 1e-12);
  EXPECT_THROW(estimate_eta(loss, id, w, std::span<const std::size_t>{}, 0.0, cfg, 1),
               InvalidArgument);
}

TEST(EstimateEta, ExactMetricGivesUnitHessianTerm) {
  Rng rng(72);
  GlmLoss loss(LossKind::logistic, oracle::random_dataset(50, 8, true, rng), 0.0);
  const auto w = oracle::gaussian_vector(8, rng);
  const auto all = loss.all_indices();
  const double rho = 0.2;
  const auto pre = build_ssn(loss, w, all, rho);
  SolverConfig cfg;
  cfg.eta_rule = EtaRule::hessian;
  cfg.alpha = 1.0;
  const auto e = estimate_eta(loss, *pre, w, all, rho, cfg, 3);
  EXPECT_NEAR(e.lambda_hat, 1.0, 1e-2);
  EXPECT_FALSE(e.fallback);
}

TEST(Saga, TableMeanTracksTableAndFirstStepIsPlainGradient) {
  Rng rng(73);
  GlmLoss loss(LossKind::logistic, oracle::random_dataset(30, 6, true, rng, 0.6), 0.02);
  const Eigen::MatrixXd a = oracle::to_eigen(loss.data().features);
  const auto w0 = oracle::gaussian_vector(6, rng);
  SagaState st(loss, w0);
  const auto none = Regularizer::none();
  const std::size_t first[3] = {4, 9, 17};
  const auto& dir = st.step(first, 0.1, none);
  // Empty table: direction is the minibatch gradient.
  Eigen::VectorXd want = Eigen::VectorXd::Zero(6);
  for (auto i : first) want += naive_sample_grad(loss, a, i, oracle::to_eigen(w0)) / 3.0;
  EXPECT_LE((oracle::to_eigen(dir) - want).cwiseAbs().maxCoeff(), 1e-14);
  for (int k = 0; k < 50; ++k) st.step(rng.sample_without_replacement(30, 4), 0.1, none);
  const auto m = st.recompute_table_mean();
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(st.table_mean()[j], m[j], 1e-13);
}

TEST(Saga, ConvergesOnSmallLasso) {
  GlmLoss loss(LossKind::squared, lasso_data(100, 10, 10.0, 8), 0.0);
  const auto reg = Regularizer::l1(1e-3);
  const auto ref = reference_solve(loss, reg);
  SolverConfig cfg;
  cfg.b_g = 1;
  cfg.budget.max_passes = 100;
  cfg.seed = 2;
  const auto r = saga_run(loss, reg, cfg);
  EXPECT_LE(suboptimality_from_values(r.trace.back().objective, ref.objective).relative, 1e-8);
}

TEST(Suboptimality, Examples) {
  auto s = suboptimality_from_values(3.0, 2.0);
  EXPECT_EQ(s.absolute, 1.0);
  EXPECT_EQ(s.relative, 0.5);
  s = suboptimality_from_values(0.25, 0.0);
  EXPECT_EQ(s.relative, 0.25);
  s = suboptimality_from_values(1.0, 1.5);
  EXPECT_TRUE(s.clipped);
  EXPECT_EQ(s.absolute, 0.0);
}

TEST(GradientMapping, ReducesToGradientNormWithoutRegularizer) {
  const Vector g{3.0, 4.0};
  EXPECT_NEAR(gradient_mapping_norm(Regularizer::none(), Vector{1, 1}, g), 5.0, 1e-14);
  // At an l1 stationary point the map vanishes.
  EXPECT_EQ(gradient_mapping_norm(Regularizer::l1(1.0), Vector{0, 2}, Vector{0.5, -1.0}), 0.0);
}

TEST(ReferenceSolve, SatisfiesIndependentOptimalityCheck) {
  Rng rng(74);
  GlmLoss loss(LossKind::logistic, oracle::random_dataset(80, 12, true, rng), 1e-3);
  const auto reg = Regularizer::l1(0.01);
  const auto ref = reference_solve(loss, reg);
  const Eigen::MatrixXd a = oracle::to_eigen(loss.data().features);
  const Eigen::VectorXd g = naive_full_grad(loss, a, oracle::to_eigen(ref.w));
  for (std::size_t j = 0; j < 12; ++j) {
    if (ref.w[j] != 0.0)
      EXPECT_NEAR(g(j), -0.01 * std::copysign(1.0, ref.w[j]), 1e-9);
    else
      EXPECT_LE(std::abs(g(j)), 0.01 + 1e-9);
  }
  EXPECT_LE(ref.grad_map_norm, 1e-10);
}

TEST(SapphireRun, SsnConvergesToReference) {
  GlmLoss loss(LossKind::squared, lasso_data(300, 40, 1e3, 9), 0.0);
  const auto reg = Regularizer::l1(1e-3);
  const auto ref = reference_solve(loss, reg);
  SolverConfig cfg;
  cfg.b_h = 300;
  cfg.alpha = 1.0;
  cfg.seed = 3;
  cfg.budget.max_passes = 120;
  const auto r = sapphire_run(loss, reg, cfg);
  EXPECT_LE(suboptimality_from_values(r.trace.back().objective, ref.objective).relative, 1e-10);
}

TEST(SapphireRun, TerminationReasons) {
  GlmLoss loss(LossKind::squared, lasso_data(100, 10, 10.0, 10), 0.0);
  const auto reg = Regularizer::l1(1e-3);
  SolverConfig cfg = small_config();
  cfg.tol = 1e-6;
  cfg.budget.max_passes = 500;
  EXPECT_EQ(sapphire_run(loss, reg, cfg).termination, Termination::tolerance);
  cfg.tol = 0.0;
  cfg.alpha = 1e8;
  cfg.precond = PreconditionerKind::identity;
  EXPECT_EQ(sapphire_run(loss, reg, cfg).termination, Termination::diverged);
  SolverConfig bad = small_config();
  bad.b_g = 1000;
  EXPECT_THROW(sapphire_run(loss, reg, bad), InvalidArgument);
}

TEST(SolverConfig, ResolvedDefaults) {
  const auto c = SolverConfig{}.resolve(400);
  EXPECT_EQ(c.b_g, 20u);
  EXPECT_EQ(c.b_h, 20u);
  EXPECT_EQ(c.m, 40u);
  EXPECT_EQ(SolverConfig{}.resolve(401).b_g, 21u);
  EXPECT_EQ(SolverConfig{}.resolve(401).m, 39u);
}

TEST(SapphireRun, FiniteBlowupIsReportedAsDivergence) {
  // Small gradient batches with the curvature-only step overshoot.
  GlmLoss loss(LossKind::squared, lasso_data(400, 60, 100.0, 1), 0.0);
  SolverConfig cfg;
  cfg.b_h = 400;
  cfg.alpha = 1.0;
  cfg.eta_rule = EtaRule::hessian;
  cfg.budget.max_passes = 60;
  const auto r = sapphire_run(loss, Regularizer::l1(1e-3), cfg);
  EXPECT_EQ(r.termination, Termination::diverged);
  EXPECT_EQ(r.message, "objective blew up");
  EXPECT_GT(r.trace.back().objective, 1e10 * r.trace.front().objective);
}
