#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sapphire/data.hpp"
#include "sapphire/errors.hpp"
#include "sapphire/losses.hpp"
#include "sapphire/regularizers.hpp"
#include "sapphire/solver.hpp"

namespace sapphire::bench {

inline constexpr const char* kExperimentSchema = "sapphire-experiment/1";
inline constexpr const char* kSummarySchema = "sapphire-summary/1";
inline constexpr const char* kReferenceFormat = "sapphire-reference/1";
inline constexpr const char* kTraceHeader =
    "stage,passes,seconds,objective,relative_error,grad_map_norm,support_size,apg_iters";

// Spec validation failure; `path` is a JSON-pointer-like location.
class SpecError : public InvalidArgument {
 public:
  SpecError(const std::string& path, const std::string& what)
      : InvalidArgument(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

enum class Method { sapphire_ssn, sapphire_nyssn, prox_svrg, saga };
const char* to_string(Method m) noexcept;

struct DatasetSource {
  std::filesystem::path path;  // as resolved
  std::optional<std::size_t> n_features;
  std::optional<double> positive_class;
  bool normalize = false;
  bool intercept = false;
};

struct ProblemSpec {
  std::string name;
  std::optional<SyntheticParams> synthetic;
  std::optional<DatasetSource> dataset;
  LossKind loss = LossKind::squared;
  double nu = 0.0;
  Regularizer regularizer;
};

struct SolverSpec {
  std::string name;
  Method method = Method::sapphire_ssn;
  // Raw key/value overrides, applied in order after the budget.
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct ReferenceSpec {
  bool enabled = true;  // only used for convex regularizers
  std::filesystem::path cache_dir;
  double tol = 1e-12;
  double max_seconds = 600.0;
};

struct ExperimentSpec {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<ProblemSpec> problems;
  std::vector<SolverSpec> solvers;
  Budget budget;
  std::filesystem::path output_dir;
  ReferenceSpec reference;
};

// Parses and validates a spec; relative paths resolve against base_dir.
ExperimentSpec parse_experiment(std::string_view json_text,
                                const std::filesystem::path& base_dir);
ExperimentSpec load_experiment(const std::filesystem::path& path);

// Applies one "key=value" style override to a solver configuration.
void apply_override(SolverConfig& cfg, const std::string& key, const std::string& value);
// Names accepted by apply_override.
const std::vector<std::string>& override_keys();

struct RunOptions {
  unsigned threads = 1;
  bool strict_paper = false;
  bool record_timing = true;
  // Applied to every solver after the spec's own overrides.
  std::vector<std::pair<std::string, std::string>> overrides;
  std::function<void(const std::string&)> log;
};

struct CellOutcome {
  std::string problem;
  std::string solver;
  Method method = Method::sapphire_ssn;
  std::uint64_t seed = 0;
  std::string status;  // ok | diverged | error
  std::string message;
  std::optional<SolverResult> result;
  std::filesystem::path trace_file;
};

struct ExperimentOutcome {
  std::vector<CellOutcome> cells;
  std::filesystem::path summary_file;
};

// Seed used by cell `index` (problem-major order).
std::uint64_t cell_seed(std::uint64_t experiment_seed, std::size_t index);

Dataset materialize(const ProblemSpec& problem);
ExperimentOutcome run_experiment(const ExperimentSpec& spec, const RunOptions& options);

// Reference solutions cached as JSON with a base64 float64 payload.
std::uint64_t problem_hash(const GlmLoss& loss, const Regularizer& reg);
std::string base64_encode(const std::vector<double>& values);
std::vector<double> base64_decode_doubles(std::string_view text);
void write_reference(const std::filesystem::path& file, std::uint64_t hash,
                     const ReferenceSolution& sol);
std::optional<ReferenceSolution> read_reference(const std::filesystem::path& file,
                                                std::uint64_t hash, std::size_t p);
ReferenceSolution cached_reference(const GlmLoss& loss, const Regularizer& reg,
                                   const ReferenceSpec& spec, bool* from_cache = nullptr);

// First x at which relative error <= threshold, if any.
std::optional<double> first_crossing(const std::vector<double>& x,
                                     const std::vector<double>& rel, double threshold);

struct CompareRow {
  std::string solver;
  std::string status;
  std::optional<double> passes_to_target;
  std::optional<double> seconds_to_target;
  std::optional<double> final_relative_error;
};

struct CompareOutcome {
  std::vector<CompareRow> ranking;  // reached target first, by passes
  std::filesystem::path long_csv;
  std::string table;
};

// Throws IoError when the directory holds no traces.
CompareOutcome compare_experiment(const std::filesystem::path& dir, double target = 1e-6);

}  // namespace sapphire::bench
