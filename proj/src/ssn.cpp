#include "cs3d/ssn.hpp"

#include <cmath>
#include <stdexcept>

#include "cs3d/ops.hpp"

namespace cs3d {

void SsnParams::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("ssn beta must be finite and > 0");
  }
  if (!std::isfinite(theta)) throw std::invalid_argument("ssn theta must be finite");
}

namespace {

std::vector<double> forward_values(std::span<const double> x, double theta) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > theta ? x[i] : 0.0;
  return out;
}

}  // namespace

Tensor ssn(const Tensor& x, const SsnParams& p) {
  return make_result("ssn", x.shape(), forward_values(x.data(), p.theta), {x},
                     [x, p](const TensorImpl& o, const GradSink& sink) {
                       double* g = sink.grad(0);
                       auto v = x.data();
                       for (std::size_t i = 0; i < o.grad.size(); ++i) {
                         g[i] += o.grad[i] * logistic(p.beta * (v[i] - p.theta));
                       }
                     });
}

Tensor ssn_forward(const Tensor& x, const SsnParams& p) {
  return Tensor(x.shape(), forward_values(x.data(), p.theta));
}

Tensor ssn_backward(const Tensor& x, const SsnParams& p, const Tensor& upstream) {
  if (upstream.shape() != x.shape()) {
    throw ShapeError("ssn_backward: upstream " + upstream.shape().str() + " vs input " +
                     x.shape().str());
  }
  auto v = x.data();
  auto u = upstream.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = u[i] * logistic(p.beta * (v[i] - p.theta));
  return Tensor(x.shape(), std::move(out));
}

}  // namespace cs3d
