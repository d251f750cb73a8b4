#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cs3d/tensor.hpp"

namespace cs3d {

struct CheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  /// Coordinates whose stencil straddles a kink (see CheckOptions).
  std::size_t nonsmooth = 0;
  bool non_finite = false;
  bool passed = false;
};

struct CheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// A failing coordinate is re-estimated with step/10. If the two
  /// estimates disagree beyond tolerance the function is not smooth inside
  /// the stencil (relu, max ties) and the coordinate is counted as
  /// nonsmooth instead of failed. At most 1 in `max_nonsmooth_ratio`
  /// coordinates may be skipped this way.
  bool skip_nonsmooth = true;
  std::size_t max_nonsmooth_ratio = 10;
};

/// Central-difference check of every coordinate of every tensor in `inputs`
/// against the tape gradient of the scalar returned by `f`. The inputs are
/// perturbed in place and restored; `f` must read them on every call.
CheckReport gradient_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const CheckOptions& options = {});

/// Single-input form: f(x) scalar, checked at x.
CheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              double h, double tol);

}  // namespace cs3d
