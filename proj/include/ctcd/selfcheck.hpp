#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctcd {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick oracle suites: CTC against enumeration, CTC gradients against
/// finite differences, collapsed-prefix marginals against enumeration,
/// tree-mask verification against sequential recomputation, and greedy
/// speculative decoding against plain greedy decoding.
std::vector<CheckResult> run_selfcheck(std::uint64_t seed);

}  // namespace ctcd
