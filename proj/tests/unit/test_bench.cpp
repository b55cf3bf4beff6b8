#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sapphire/bench.hpp"

using namespace sapphire;
using namespace sapphire::bench;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sapphire-test-bench-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json base_spec() {
  return json::parse(R"({
    "schema": "sapphire-experiment/1",
    "name": "unit",
    "seed": 11,
    "problem": {"name": "tiny", "synthetic": {"n": 60, "p": 8, "condition_number": 10,
                "support_size": 3, "noise_std": 0.01, "task": "lasso"}},
    "loss": {"kind": "squared"},
    "regularizer": {"kind": "l1", "lambda": 0.001},
    "solvers": [
      {"name": "ssn", "method": "sapphire-ssn", "config": {"b_h": 60, "alpha": 1}},
      {"name": "svrg", "method": "prox-svrg"}
    ],
    "budget": {"max_passes": 20}
  })");
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string spec_error_path(const std::string& text) {
  try {
    parse_experiment(text, "/base");
  } catch (const SpecError& e) {
    return e.path();
  }
  return "<none>";
}

std::string spec_error_path(const json& j) { return spec_error_path(j.dump()); }

}  // namespace

TEST(ParseExperiment, ValidSpecDefaults) {
  const auto s = parse_experiment(base_spec().dump(), "/base");
  EXPECT_EQ(s.name, "unit");
  EXPECT_EQ(s.seed, 11u);
  ASSERT_EQ(s.problems.size(), 1u);
  EXPECT_EQ(s.problems[0].loss, LossKind::squared);
  EXPECT_EQ(s.problems[0].regularizer.kind(), RegularizerKind::l1);
  EXPECT_EQ(s.problems[0].synthetic->n, 60u);
  ASSERT_EQ(s.solvers.size(), 2u);
  EXPECT_EQ(s.solvers[1].method, Method::prox_svrg);
  EXPECT_EQ(s.budget.max_passes, 20.0);
  EXPECT_EQ(s.output_dir, fs::path("/base/results/unit"));
  EXPECT_EQ(s.reference.cache_dir, fs::path("/base/results/unit/reference-cache"));
}

TEST(ParseExperiment, ErrorsCarryLocation) {
  auto j = base_spec();
  j["solvers"][0]["config"]["bogus"] = 1;
  EXPECT_EQ(spec_error_path(j), "$.solvers[0].config.bogus");

  j = base_spec();
  j["extra"] = true;
  EXPECT_EQ(spec_error_path(j), "$.extra");

  j = base_spec();
  j["solvers"][1]["method"] = "lbfgs";
  EXPECT_EQ(spec_error_path(j), "$.solvers[1].method");

  j = base_spec();
  j["regularizer"] = {{"kind", "scad"}, {"lambda", 0.1}, {"a", 1.5}};
  EXPECT_NE(spec_error_path(j), "<none>");

  j = base_spec();
  j["schema"] = "sapphire-experiment/2";
  EXPECT_EQ(spec_error_path(j), "$.schema");

  j = base_spec();
  j["problem"]["dataset"] = {{"path", "x.svm"}};
  EXPECT_NE(spec_error_path(j), "<none>");  // both synthetic and dataset

  EXPECT_EQ(spec_error_path(std::string("{not json")), "$");
  EXPECT_EQ(spec_error_path(std::string("[1, 2]")), "$");
}

TEST(ParseExperiment, MultipleProblemsAndPerProblemLoss) {
  auto j = base_spec();
  j.erase("problem");
  j["problems"] = json::array({
      {{"name", "a"}, {"synthetic", {{"n", 50}, {"p", 5}, {"task", "lasso"}}}},
      {{"name", "b"},
       {"synthetic", {{"n", 50}, {"p", 5}, {"task", "logistic"}}},
       {"loss", {{"kind", "logistic"}, {"nu", 0.01}}},
       {"regularizer", {{"kind", "mcp"}, {"lambda", 0.1}}}},
  });
  const auto s = parse_experiment(j.dump(), "/base");
  ASSERT_EQ(s.problems.size(), 2u);
  EXPECT_EQ(s.problems[1].loss, LossKind::logistic);
  EXPECT_EQ(s.problems[1].nu, 0.01);
  EXPECT_EQ(s.problems[1].regularizer.kind(), RegularizerKind::mcp);
  EXPECT_EQ(s.problems[1].regularizer.shape(), 3.0);
}

TEST(ApplyOverride, KnownKeysAndErrors) {
  SolverConfig c;
  apply_override(c, "b_g", "7");
  apply_override(c, "rho", "1e-3");
  apply_override(c, "snapshot", "average");
  apply_override(c, "eta_rule", "hessian");
  apply_override(c, "max_passes", "12.5");
  EXPECT_EQ(c.b_g, 7u);
  EXPECT_EQ(c.rho, 1e-3);
  EXPECT_EQ(c.snapshot, SnapshotOption::average);
  EXPECT_EQ(c.eta_rule, EtaRule::hessian);
  EXPECT_EQ(c.budget.max_passes, 12.5);
  EXPECT_THROW(apply_override(c, "b_g", "-1"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "b_g", "3x"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "nope", "1"), InvalidArgument);
  EXPECT_THROW(apply_override(c, "snapshot", "middle"), InvalidArgument);
  for (const auto& k : override_keys()) EXPECT_FALSE(k.empty());
}

TEST(Base64, RoundTripIsBitExact) {
  const std::vector<double> v{0.0, -0.0, 1.0 / 3.0, 1e-308, -1e308, 5e-324};
  const auto text = base64_encode(v);
  EXPECT_EQ(text.size() % 4, 0u);
  const auto back = base64_decode_doubles(text);
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(std::memcmp(&back[i], &v[i], 8), 0);
  EXPECT_EQ(base64_encode({1.0}), "AAAAAAAA8D8=");
  EXPECT_TRUE(base64_decode_doubles("").empty());
  EXPECT_THROW(base64_decode_doubles("AAA"), InvalidArgument);
  EXPECT_THROW(base64_decode_doubles("AAAA"), InvalidArgument);  // 3 bytes
  EXPECT_THROW(base64_decode_doubles("AA*AAAAA8D8="), InvalidArgument);
}

TEST(ReferenceCache, WriteReadAndReuse) {
  const auto dir = scratch_dir("cache");
  auto s = make_synthetic({.n = 50, .p = 6, .condition_number = 5, .support_size = 2,
                           .noise_std = 0.01, .task = SyntheticTask::lasso, .seed = 4});
  GlmLoss loss(LossKind::squared, std::make_shared<const Dataset>(s.dataset), 0.0);
  const auto reg = Regularizer::l1(1e-3);
  ReferenceSpec spec;
  spec.cache_dir = dir;
  bool hit = true;
  const auto first = cached_reference(loss, reg, spec, &hit);
  EXPECT_FALSE(hit);
  const auto second = cached_reference(loss, reg, spec, &hit);
  EXPECT_TRUE(hit);
  EXPECT_EQ(first.w, second.w);
  EXPECT_EQ(first.objective, second.objective);

  const auto h = problem_hash(loss, reg);
  EXPECT_NE(h, problem_hash(loss, Regularizer::l1(2e-3)));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    ++files;
    EXPECT_FALSE(read_reference(e.path(), h ^ 1, 6).has_value());
    EXPECT_FALSE(read_reference(e.path(), h, 7).has_value());
    EXPECT_TRUE(read_reference(e.path(), h, 6).has_value());
    std::ofstream(e.path()) << "{broken";
    EXPECT_FALSE(read_reference(e.path(), h, 6).has_value());
  }
  EXPECT_EQ(files, 1u);
  // A corrupt cache entry is recomputed.
  cached_reference(loss, reg, spec, &hit);
  EXPECT_FALSE(hit);
}

TEST(FirstCrossing, Examples) {
  EXPECT_EQ(first_crossing({0, 1, 2, 3}, {1, 1e-2, 1e-7, 1e-9}, 1e-6), 2.0);
  EXPECT_EQ(first_crossing({0, 1}, {1, 1e-6}, 1e-6), 1.0);
  EXPECT_FALSE(first_crossing({0, 1}, {1, 0.5}, 1e-6).has_value());
}

TEST(CellSeed, DistinctAndStable) {
  EXPECT_EQ(cell_seed(1, 0), cell_seed(1, 0));
  EXPECT_NE(cell_seed(1, 0), cell_seed(1, 1));
  EXPECT_NE(cell_seed(1, 0), cell_seed(2, 0));
}

TEST(RunExperiment, WritesTracesSummaryAndIsReproducible) {
  const auto dir = scratch_dir("run");
  auto j = base_spec();
  j["output_dir"] = (dir / "out").string();
  const auto spec = parse_experiment(j.dump(), dir);
  RunOptions o;
  o.record_timing = false;
  const auto out = run_experiment(spec, o);
  ASSERT_EQ(out.cells.size(), 2u);
  for (const auto& c : out.cells) EXPECT_EQ(c.status, "ok") << c.message;
  EXPECT_TRUE(fs::exists(dir / "out" / "ssn.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "svrg.csv"));

  const auto csv = slurp(dir / "out" / "ssn.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kTraceHeader);
  const auto summary = json::parse(slurp(out.summary_file));
  EXPECT_EQ(summary["schema"], kSummarySchema);
  EXPECT_EQ(summary["timing_recorded"], false);
  const auto& prob = summary["problems"][0];
  EXPECT_EQ(prob["reference"]["source"], "reference-solver");
  EXPECT_LE(prob["best_objective"].get<double>(), prob["reference"]["objective"].get<double>());
  EXPECT_EQ(prob["solvers"].size(), 2u);

  const auto first_summary = slurp(out.summary_file);
  run_experiment(spec, o);
  EXPECT_EQ(slurp(dir / "out" / "ssn.csv"), csv);
  const auto again = json::parse(slurp(out.summary_file));
  EXPECT_EQ(again["problems"][0]["reference"]["source"], "cache");
  EXPECT_EQ(again["problems"][0]["solvers"], prob["solvers"]);

  // Threads change scheduling only.
  o.threads = 2;
  run_experiment(spec, o);
  EXPECT_EQ(slurp(dir / "out" / "ssn.csv"), csv);
}

TEST(RunExperiment, MissingDatasetIsIoError) {
  auto j = base_spec();
  j["problem"] = {{"name", "d"}, {"dataset", {{"path", "/nonexistent/data.svm"}}}};
  const auto spec = parse_experiment(j.dump(), scratch_dir("missing"));
  try {
    run_experiment(spec, {});
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/data.svm"), std::string::npos);
  }
}

TEST(CompareExperiment, RanksByPassesAndWritesLongCsv) {
  const auto dir = scratch_dir("compare");
  auto j = base_spec();
  j["output_dir"] = dir.string();
  j["budget"]["max_passes"] = 60;
  RunOptions o;
  o.record_timing = false;
  run_experiment(parse_experiment(j.dump(), dir), o);
  const auto c = compare_experiment(dir, 1e-6);
  ASSERT_EQ(c.ranking.size(), 2u);
  EXPECT_TRUE(fs::exists(c.long_csv));
  const auto text = slurp(c.long_csv);
  EXPECT_EQ(text.substr(0, text.find('\n')), "solver,x_kind,x,relative_error");
  if (c.ranking[0].passes_to_target && c.ranking[1].passes_to_target)
    EXPECT_LE(*c.ranking[0].passes_to_target, *c.ranking[1].passes_to_target);
  if (!c.ranking[0].passes_to_target) EXPECT_FALSE(c.ranking[1].passes_to_target);
  EXPECT_FALSE(c.table.empty());
  EXPECT_THROW(compare_experiment(scratch_dir("compare-empty")), IoError);
}
