#pragma once

// Randomized gradient verification of every differentiable op and head,
// plus the gradient-reversal sign contract.

#include <cstdint>
#include <string>
#include <vector>

namespace cwda {

struct SuiteCase {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

/// Gradient reaching the input through a head with GRL(lambda), compared with
/// -lambda times the gradient through the same head without the GRL node.
struct GrlCase {
  std::string head;
  double lambda = 0.0;
  double max_abs_diff = 0.0;
  bool passed = true;
};

struct SuiteReport {
  std::vector<SuiteCase> cases;
  std::vector<GrlCase> grl;
  std::size_t total_trials = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  std::size_t trials_per_case = 8;
  /// Raises trials_per_case until the suite runs at least this many trials.
  std::size_t min_total_trials = 0;
  double tolerance = 1e-4;
};

SuiteReport run_gradcheck_suite(const SuiteOptions& options);

}  // namespace cwda
