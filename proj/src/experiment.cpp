#include "cs3d/experiment.hpp"

#include <iomanip>
#include <ostream>

#include "cs3d/profiler.hpp"

namespace cs3d {

std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& test_set,
                                      const TrainConfig& cfg, std::uint64_t model_seed,
                                      const Shape& profile_shape) {
  const auto shape = train_set.input_shape();
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(shape, train_set.class_count, model_seed)) {
    Model m = build_model(v.config);
    ModelConfig profile_cfg = v.config;
    profile_cfg.input_shape = {profile_shape[0], profile_shape[1], profile_shape[2],
                               profile_shape[3]};
    const Model reference = build_model(profile_cfg);

    AblationRow row;
    row.variant = v.label;
    row.params = count_params(reference);
    row.flops = count_flops(reference, profile_shape).total_flops;
    const TrainingHistory h = train(m, train_set, test_set, cfg);
    row.train_loss = h.epochs.empty() ? 0.0 : h.epochs.back().train_loss;
    row.accuracy = evaluate(m, test_set.empty() ? train_set : test_set, cfg.batch_size).accuracy;
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,params,flops,flops_g,train_loss,accuracy\n";
  for (const auto& r : rows) {
    os << r.variant << ',' << r.params << ',' << r.flops << ',' << std::fixed
       << std::setprecision(4) << static_cast<double>(r.flops) / 1e9 << ','
       << std::setprecision(6) << r.train_loss << ',' << r.accuracy << '\n';
    os << std::defaultfloat;
  }
}

}  // namespace cs3d
