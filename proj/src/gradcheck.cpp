#include "cs3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cs3d {

CheckReport gradient_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const CheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("finite difference step must be > 0");
  for (auto& t : inputs) {
    if (!t.is_leaf()) throw std::invalid_argument("gradient_check inputs must be leaves");
    t.set_requires_grad(true);
    t.zero_grad();
  }

  CheckReport report;
  Tensor loss = f();
  if (loss.numel() != 1) throw ShapeError("gradient_check needs a scalar function");
  if (!std::isfinite(loss.item())) report.non_finite = true;
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }

  NoGradGuard no_grad;
  const double h = options.step;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      auto central = [&](double step) {
        data[i] = saved + step;
        const double up = f().item();
        data[i] = saved - step;
        const double down = f().item();
        data[i] = saved;
        return (up - down) / (2.0 * step);
      };
      auto rel_error = [&](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), options.floor});
      };
      const double numeric = central(h);
      const double a = analytic[k][i];
      ++report.coordinates;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        report.non_finite = true;
        continue;
      }
      const double abs_err = std::abs(a - numeric);
      const double rel = rel_error(a, numeric);
      if (rel >= options.tolerance && options.skip_nonsmooth) {
        const double fine = central(h / 10.0);
        if (std::isfinite(fine) && rel_error(numeric, fine) >= options.tolerance) {
          ++report.nonsmooth;
          continue;
        }
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = i;
      }
    }
  }
  for (auto& t : inputs) t.zero_grad();
  const bool few_kinks = options.max_nonsmooth_ratio == 0 ||
                         report.nonsmooth * options.max_nonsmooth_ratio <= report.coordinates;
  report.passed = !report.non_finite && few_kinks && report.max_rel_error < options.tolerance;
  return report;
}

CheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                              double h, double tol) {
  Tensor leaf = x.detach();
  CheckOptions options;
  options.step = h;
  options.tolerance = tol;
  return gradient_check([&] { return f(leaf); }, {leaf}, options);
}

}  // namespace cs3d
