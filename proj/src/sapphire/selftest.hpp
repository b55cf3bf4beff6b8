#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sapphire/regularizers.hpp"

namespace sapphire::selftest {

// Coordinatewise prox under test; defaults to Regularizer::prox_scalar.
using ProxFn = std::function<double(const Regularizer&, double x, double t)>;

struct Options {
  ProxFn prox;
  std::uint64_t seed = 20240601;
  std::size_t prox_samples = 3334;  // per regularizer family
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Known faults: "soft-threshold-sign" flips the sign of the l1 prox.
Options with_fault(Options base, const std::string& fault);
const std::vector<std::string>& fault_names();

const std::vector<std::string>& suite_names();
SuiteResult run_suite(const std::string& name, const Options& options);
std::vector<SuiteResult> run_all(const Options& options,
                                 const std::function<void(const SuiteResult&)>& on_result = {});
// Number of failed suites, capped at 125.
int exit_code(const std::vector<SuiteResult>& results);

/// argmin_z 1/2 (z - x)^2 + t r(z) by grid search and golden section,
/// refined by bisection on an independently coded subgradient.
double prox_oracle(const Regularizer& reg, double x, double t);

}  // namespace sapphire::selftest
