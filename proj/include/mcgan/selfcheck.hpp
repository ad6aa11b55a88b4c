#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcgan {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Property checks run by `mcgan check`: finite-difference gradients,
/// W1 against exhaustive matching and the sorted 1D formula, and analytic
/// KL / OT-map identities.
std::vector<CheckResult> run_self_checks(std::uint64_t seed = 0);

}  // namespace mcgan
