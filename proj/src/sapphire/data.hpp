#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "sapphire/linalg.hpp"

namespace sapphire {

enum class LabelKind { binary, real };

/// Feature matrix plus labels. Binary labels are always stored as -1/+1.
struct Dataset {
  SparseRowMatrix features;
  Vector labels;
  LabelKind kind = LabelKind::real;
  std::string name;

  std::size_t n() const noexcept { return features.rows(); }
  std::size_t p() const noexcept { return features.cols(); }

  // Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  bool operator==(const Dataset& other) const = default;
};

enum class LabelMode { automatic, binary, real };

struct LibsvmOptions {
  // Pins the feature dimension; indices beyond it are a parse error.
  std::optional<std::size_t> n_features;
  LabelMode label_mode = LabelMode::automatic;
  // When set, labels equal to this class become +1 and all others -1.
  std::optional<double> positive_class;
  std::string name;
};

/// Pull-based byte source so the parser never materializes the file.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  // Returns 0 at end of stream.
  virtual std::size_t read(char* buffer, std::size_t capacity) = 0;
};

Dataset parse_libsvm(ByteSource& source, const LibsvmOptions& options = {});
Dataset parse_libsvm(std::string_view text, const LibsvmOptions& options = {});
// Opens plain or gzip-compressed files (detected by magic bytes).
Dataset load_libsvm(const std::filesystem::path& path,
                    const LibsvmOptions& options = {});

// Writes the canonical text form; parse_libsvm reads it back exactly.
void write_libsvm(const Dataset& d, std::ostream& out);

// Environment variable consulted for relative dataset paths.
inline constexpr const char* kDataDirEnv = "SAPPHIRE_DATA_DIR";
// Returns the path as given if it exists, otherwise tries under
// $SAPPHIRE_DATA_DIR. The result may not exist.
std::filesystem::path resolve_dataset_path(const std::filesystem::path& path);

Dataset normalize_rows(const Dataset& d);
// Appends a constant-one column (intercept feature).
Dataset append_constant_column(const Dataset& d);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
  IndexArray train_rows;  // ascending
  IndexArray test_rows;   // ascending
};
TrainTestSplit train_test_split(const Dataset& d, double test_fraction,
                                std::uint64_t seed);

enum class SyntheticTask { lasso, logistic };

struct SyntheticParams {
  std::size_t n = 0;
  std::size_t p = 0;
  double condition_number = 1.0;
  std::size_t support_size = 0;
  double noise_std = 0.0;
  SyntheticTask task = SyntheticTask::lasso;
  std::uint64_t seed = 0;
};

struct SyntheticProblem {
  Dataset dataset;
  Vector w_true;
  double condition_number = 1.0;
  std::size_t support_size = 0;
  std::uint64_t seed = 0;
  // Singular values used to build the design, nonincreasing.
  Vector singular_values;
};

/// A = U diag(s) V^T with Haar-random U, V and geometrically spaced s from
/// sqrt(n) down to sqrt(n / condition_number), so A^T A / n has eigenvalues
/// in [1 / condition_number, 1].
SyntheticProblem make_synthetic(const SyntheticParams& params);

}  // namespace sapphire
