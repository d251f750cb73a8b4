#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cs3d/network.hpp"

namespace cs3d {

class ProfileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProfileReport {
  std::string model;
  Shape input_shape{1};
  std::vector<LayerCost> rows;
  std::size_t total_params = 0;
  std::size_t total_flops = 0;  // 1 MAC = 1 FLOP
  std::optional<double> energy_j;
  std::string energy_source;

  double flops_g() const { return static_cast<double>(total_flops) / 1e9; }
  std::optional<double> energy_mj() const {
    return energy_j ? std::optional<double>(*energy_j * 1e3) : std::nullopt;
  }

  /// Aligned text table with a summary block.
  void write_table(std::ostream& os) const;
  /// "layer,kind,out_shape,params,flops" rows plus a "total" row.
  void write_csv(std::ostream& os) const;
};

/// Symbolic per-layer cost walk. `input_shape` is (C, T, H, W) or
/// (B, C, T, H, W); rank 4 means batch 1.
ProfileReport count_flops(const Model& m, const Shape& input_shape);
std::size_t count_params(const Model& m);

struct PowerSample {
  double t_s = 0.0;
  double watts = 0.0;
};

struct PowerTrace {
  std::vector<PowerSample> samples;
  std::string source;

  /// Strictly increasing timestamps, non-negative finite power.
  void validate() const;
};

/// Header "t_s,watts"; a leading "# source=..." comment names the device.
PowerTrace read_power_trace(std::istream& is);
PowerTrace load_power_trace(const std::filesystem::path& path);
void write_power_trace(std::ostream& os, const PowerTrace& trace);

enum class Quadrature { kLeftRiemann, kTrapezoid };

/// Joules. Left Riemann uses each interval's own width t[i+1] - t[i].
double integrate_energy(const PowerTrace& trace, Quadrature q = Quadrature::kLeftRiemann);
/// Fixed-step form sum_{i<N-1} P(t_i) * dt.
double integrate_energy_fixed(const PowerTrace& trace, double dt);

ProfileReport profile(const Model& m, const Shape& input_shape,
                      const std::optional<PowerTrace>& trace = std::nullopt,
                      Quadrature q = Quadrature::kLeftRiemann);

/// Three significant figures with an engineering exponent, e.g.
/// "18.2 × 10³ mJ".
std::string format_engineering(double value, const std::string& unit);

/// One row per report: "model,params,flops,flops_g,energy_mj".
void write_comparison_csv(std::ostream& os, const std::vector<ProfileReport>& reports);

}  // namespace cs3d
