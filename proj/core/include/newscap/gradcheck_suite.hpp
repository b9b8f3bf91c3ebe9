#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace newscap {

struct GradCheckResult {
  std::string name;
  double max_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double h = 1e-5;
  /// Sampled finite-difference coordinates per parameter tensor for the
  /// whole-model check.
  std::size_t coords_per_tensor = 12;
  /// Test hook: a check name whose analytic gradient is deliberately
  /// perturbed so the harness can observe a failure path.
  std::string break_check;
};

/// Finite-difference verification of every primitive op (threshold 1e-6)
/// and of the composite block equations plus the full-block NLL
/// (threshold 1e-4), at toy dimensions.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options = {});

}  // namespace newscap
