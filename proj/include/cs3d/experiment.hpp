#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cs3d/events.hpp"
#include "cs3d/network.hpp"
#include "cs3d/trainer.hpp"

namespace cs3d {

struct AblationRow {
  std::string variant;
  std::size_t params = 0;
  std::size_t flops = 0;  // at the profile shape
  double train_loss = 0.0;
  double accuracy = 0.0;
};

/// Builds, trains and evaluates each comparison variant on the same data.
/// FLOPs are counted at `profile_shape` (C, T, H, W), which may differ from
/// the training input size.
std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& test_set,
                                      const TrainConfig& cfg, std::uint64_t model_seed,
                                      const Shape& profile_shape);

/// Header "variant,params,flops,flops_g,train_loss,accuracy".
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace cs3d
