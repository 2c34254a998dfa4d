#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xdistill/cld.hpp"
#include "xdistill/xgd.hpp"

namespace xdistill {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Replaceable pieces, so that a deliberately broken implementation can be
/// shown to fail the suite.
struct VerifyHooks {
  std::function<GateEntry(std::span<const double>, std::span<const double>)> gate;
  std::function<double(const UnifiedDistribution&, const UnifiedDistribution&)> kl;
};

VerifyHooks default_hooks();

/// Runs every oracle-backed property check. `scale` in (0, 1] shrinks the
/// fuzzing sample counts.
std::vector<CheckResult> run_verify_suite(const VerifyHooks& hooks = default_hooks(), double scale = 1.0);

/// One JSON object per line plus a final summary line.
std::string format_results(const std::vector<CheckResult>& results);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace xdistill
