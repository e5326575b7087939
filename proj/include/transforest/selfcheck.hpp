#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "transforest/linalg.hpp"

namespace transforest {

using linalg::Matrix;

/// Norm implementations exercised by the property suites. Tests swap in a
/// broken one to confirm that the suites catch it.
struct NormFunctions {
  std::function<double(const Matrix&)> nuclear = linalg::nuclear_norm;
  std::function<double(const Matrix&)> spectral = linalg::spectral_norm;
  std::function<double(const Matrix&)> frobenius = linalg::frobenius_norm;
};

struct SelfcheckOptions {
  /// Random (A, B) pairs per norm suite; the other suites scale from it
  /// (orthogonal equality cases trials/4, objective trials/2, subgradient trials/4).
  int trials = 200;
  std::uint64_t seed = 0;
  NormFunctions norms;
};

struct SuiteResult {
  std::string name;
  bool passed = true;
  int cases = 0;
  /// Largest relative error divided by its tolerance; the suite passes iff
  /// this stays at or below 1.
  double worst_ratio = 0.0;
  double seconds = 0.0;
  /// Case seed of the first violation, reproducible through the suite alone.
  std::uint64_t violating_seed = 0;
  std::string detail;
};

/// Case c of every suite draws from Rng(seed + c), so a failing case can be
/// replayed from the printed seed.
SuiteResult check_concat_nuclear(const SelfcheckOptions& options);
SuiteResult check_concat_spectral_frobenius(const SelfcheckOptions& options);
SuiteResult check_objective_nonnegative(const SelfcheckOptions& options);
SuiteResult check_subgradient(const SelfcheckOptions& options);

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& options);

/// One line per suite: PASS/FAIL, name, cases, worst error ratio, optionally
/// the run time, and the violating seed on failure. Without timing the report
/// is a pure function of the options.
std::string format_selfcheck(const std::vector<SuiteResult>& results, bool include_timing = false);

}  // namespace transforest
