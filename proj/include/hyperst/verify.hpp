#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hyperst {

struct VerifyOptions {
  double tolerance = 1e-4;  // max relative error for every gradient check
  std::size_t seeds = 100;  // random instances per primitive gradient check
  std::optional<std::string> fault_op;  // scale this op's backward by fault_factor while checking
  double fault_factor = 1.5;
};

struct CheckResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Gradient checks, reduction identities, conv distributivity, parameter-count
/// formulas, weight sharing and round-trips. Never throws for a failed check.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& options = {});

}  // namespace hyperst
