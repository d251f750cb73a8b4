#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cs3d/gradcheck.hpp"

namespace cs3d {

struct SuiteEntry {
  std::string name;
  CheckReport report;
  /// True when the gradient is compared against a closed form (the SSN
  /// surrogate) instead of finite differences.
  bool analytic = false;
};

/// Finite-difference checks over every differentiable operation on random
/// tensors with extents <= 6. The loss is a randomly weighted sum of the
/// output so every output coordinate contributes.
std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed, const CheckOptions& options = {});

}  // namespace cs3d
